//! Two-stage inference: prostate mask, mask-conditioned central gland,
//! peripheral zone by exclusion.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::{debug, info};

use crate::cascade::mask::{compose_labels, largest_component, BinaryMask2D, BinaryMask3D};
use crate::config::{parse_bool, parse_pairs, parse_upsample, parse_value, upsample_name};
use crate::dataio::{center_crop, crop_offset, uncrop, znormalize_volume, LabelVolume, NormScope, Plane, Volume, Volume3D};
use crate::error::{Error, Result};
use crate::model::{load_weights, save_weights, Network, NetworkConfig, UpsampleMode};
use crate::rng::Rng;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CascadeVariant {
    /// MRes-UNETs; stage 2 sees the image and the prostate mask as two channels.
    MultiChannel,
    /// MRes-UNETs; stage 2 sees the image multiplied by the prostate mask.
    SingleChannel,
    /// Plain UNETs with concatenation skips; stage 2 input as `SingleChannel`.
    UnetBaseline,
}

impl CascadeVariant {
    pub const ALL: [CascadeVariant; 3] = [CascadeVariant::MultiChannel, CascadeVariant::SingleChannel, CascadeVariant::UnetBaseline];

    pub fn stage2_channels(self) -> usize {
        match self {
            CascadeVariant::MultiChannel => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CascadeVariant::MultiChannel => "mres-multi",
            CascadeVariant::SingleChannel => "mres-single",
            CascadeVariant::UnetBaseline => "unet-baseline",
        }
    }
}

impl fmt::Display for CascadeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CascadeVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CascadeVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("variant: expected mres-multi, mres-single or unet-baseline, found {s:?}")))
    }
}

/// Size hyperparameters shared by both stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CascadeArch {
    pub depth: usize,
    pub base_channels: usize,
    pub channel_multiplier: usize,
    pub use_norm: bool,
    pub upsample: UpsampleMode,
}

impl Default for CascadeArch {
    fn default() -> Self {
        let c = NetworkConfig::mres(1);
        CascadeArch {
            depth: c.depth,
            base_channels: c.base_channels,
            channel_multiplier: c.channel_multiplier,
            use_norm: c.use_norm,
            upsample: c.upsample,
        }
    }
}

impl CascadeArch {
    /// Stage-1 and stage-2 network configurations for `variant`.
    pub fn network_configs(&self, variant: CascadeVariant) -> (NetworkConfig, NetworkConfig) {
        let make = |cin: usize| {
            let base = match variant {
                CascadeVariant::UnetBaseline => NetworkConfig::unet(cin),
                _ => NetworkConfig::mres(cin),
            };
            NetworkConfig {
                depth: self.depth,
                base_channels: self.base_channels,
                channel_multiplier: self.channel_multiplier,
                use_norm: self.use_norm,
                upsample: self.upsample,
                ..base
            }
        };
        (make(1), make(variant.stage2_channels()))
    }
}

/// Two networks and the variant tying them together.
#[derive(Debug, Clone)]
pub struct CascadeModel<T> {
    pub stage1: Network<T>,
    pub stage2: Network<T>,
    pub variant: CascadeVariant,
}

pub const CASCADE_FILE: &str = "cascade.cfg";
pub const STAGE1_FILE: &str = "stage1.mrwt";
pub const STAGE2_FILE: &str = "stage2.mrwt";

impl<T: Scalar> CascadeModel<T> {
    pub fn new(variant: CascadeVariant, stage1: Network<T>, stage2: Network<T>) -> Result<Self> {
        if stage1.config().in_channels != 1 {
            return Err(Error::Config(format!("stage 1 must take 1 channel, has {}", stage1.config().in_channels)));
        }
        if stage2.config().in_channels != variant.stage2_channels() {
            return Err(Error::Config(format!(
                "{variant} stage 2 must take {} channel(s), has {}",
                variant.stage2_channels(),
                stage2.config().in_channels
            )));
        }
        Ok(CascadeModel { stage1, stage2, variant })
    }

    /// Freshly initialized cascade; the stages draw from separate streams.
    pub fn build(variant: CascadeVariant, arch: &CascadeArch, rng: &Rng) -> Result<Self> {
        let (c1, c2) = arch.network_configs(variant);
        let s1 = Network::build(&c1, &mut rng.derive("init", 1))?;
        let s2 = Network::build(&c2, &mut rng.derive("init", 2))?;
        Self::new(variant, s1, s2)
    }

    pub fn arch(&self) -> CascadeArch {
        let c = self.stage1.config();
        CascadeArch {
            depth: c.depth,
            base_channels: c.base_channels,
            channel_multiplier: c.channel_multiplier,
            use_norm: c.use_norm,
            upsample: c.upsample,
        }
    }

    /// Writes `cascade.cfg`, `stage1.mrwt` and `stage2.mrwt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let a = self.arch();
        let text = format!(
            "variant = {}\ndepth = {}\nbase_channels = {}\nchannel_multiplier = {}\nuse_norm = {}\nupsample = {}\n",
            self.variant,
            a.depth,
            a.base_channels,
            a.channel_multiplier,
            a.use_norm,
            upsample_name(a.upsample)
        );
        std::fs::write(dir.join(CASCADE_FILE), text)?;
        save_weights(&self.stage1, dir.join(STAGE1_FILE))?;
        save_weights(&self.stage2, dir.join(STAGE2_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CASCADE_FILE);
        let text = std::fs::read_to_string(&path)?;
        let mut variant = None;
        let mut arch = CascadeArch::default();
        for (_, k, v) in parse_pairs(&text)? {
            match k.as_str() {
                "variant" => variant = Some(v.parse()?),
                "depth" => arch.depth = parse_value(&k, &v)?,
                "base_channels" => arch.base_channels = parse_value(&k, &v)?,
                "channel_multiplier" => arch.channel_multiplier = parse_value(&k, &v)?,
                "use_norm" => arch.use_norm = parse_bool(&k, &v)?,
                "upsample" => arch.upsample = parse_upsample(&k, &v)?,
                _ => return Err(Error::Config(format!("{}: unknown key {k:?}", path.display()))),
            }
        }
        let variant = variant.ok_or_else(|| Error::Config(format!("{}: missing variant", path.display())))?;
        let (c1, c2) = arch.network_configs(variant);
        let s1 = load_weights(dir.join(STAGE1_FILE), &c1)?;
        let s2 = load_weights(dir.join(STAGE2_FILE), &c2)?;
        Self::new(variant, s1, s2)
    }

    pub fn cast<U: Scalar>(&self) -> CascadeModel<U> {
        CascadeModel { stage1: self.stage1.cast(), stage2: self.stage2.cast(), variant: self.variant }
    }
}

/// `1 x 1 x ny x nx` tensor of a slice.
pub fn slice_tensor<T: Scalar>(plane: &Plane<f64>) -> Tensor<T> {
    Tensor::new(vec![1, 1, plane.ny, plane.nx], plane.data.iter().map(|&v| T::from_f64_lossy(v)).collect())
        .expect("plane length matches its dims")
}

/// Per-pixel argmax of a `1 x 2 x H x W` probability map. Ties go to background.
pub fn argmax_mask<T: Scalar>(probs: &Tensor<T>) -> Result<BinaryMask2D> {
    let (n, c, h, w) = probs.dims4()?;
    if n != 1 || c != 2 {
        return Err(Error::shape(format!("expected a 1x2xHxW probability map, got {:?}", probs.shape())));
    }
    let (bg, fg) = (probs.plane(0, 0), probs.plane(0, 1));
    Plane::new(w, h, bg.iter().zip(fg).map(|(b, f)| f > b).collect())
}

fn predict_mask<T: Scalar>(net: &Network<T>, input: &Tensor<T>) -> Result<(BinaryMask2D, Tensor<T>)> {
    let (n, c, _, _) = input.dims4()?;
    if n != 1 || c != net.config().in_channels {
        return Err(Error::shape(format!(
            "expected a 1x{}xHxW slice, got {:?}",
            net.config().in_channels,
            input.shape()
        )));
    }
    let probs = net.predict(input)?;
    Ok((argmax_mask(&probs)?, probs))
}

/// Stage 1: prostate mask of a preprocessed `1 x 1 x H x W` slice.
pub fn predict_prostate<T: Scalar>(model: &CascadeModel<T>, slice: &Tensor<T>) -> Result<BinaryMask2D> {
    Ok(predict_mask(&model.stage1, slice)?.0)
}

/// Stage 2: central-gland mask from the output of [`make_stage2_input`].
pub fn predict_central_gland<T: Scalar>(model: &CascadeModel<T>, stage2_input: &Tensor<T>) -> Result<BinaryMask2D> {
    Ok(predict_mask(&model.stage2, stage2_input)?.0)
}

/// Stage-2 input for a batch: `images` is `N x 1 x H x W`, `masks` holds
/// `N * H * W` flags in the same order. MultiChannel appends the mask as a
/// second channel of 0/1 values; the other variants multiply the image by it.
pub fn make_stage2_batch<T: Scalar>(images: &Tensor<T>, masks: &[bool], variant: CascadeVariant) -> Result<Tensor<T>> {
    let (n, c, h, w) = images.dims4()?;
    if c != 1 {
        return Err(Error::shape(format!("stage-2 input needs a 1-channel image, got {:?}", images.shape())));
    }
    if masks.len() != n * h * w {
        return Err(Error::shape(format!("{} mask values for image batch {:?}", masks.len(), images.shape())));
    }
    let m = |b: bool| if b { T::one() } else { T::zero() };
    match variant {
        CascadeVariant::MultiChannel => {
            let mut data = Vec::with_capacity(2 * n * h * w);
            for i in 0..n {
                data.extend_from_slice(images.plane(i, 0));
                data.extend(masks[i * h * w..(i + 1) * h * w].iter().map(|&b| m(b)));
            }
            Tensor::new(vec![n, 2, h, w], data)
        }
        _ => Tensor::new(images.shape().to_vec(), images.data().iter().zip(masks).map(|(&x, &b)| x * m(b)).collect()),
    }
}

/// Stage-2 input for one `1 x 1 x H x W` slice.
pub fn make_stage2_input<T: Scalar>(slice: &Tensor<T>, prostate_mask: &BinaryMask2D, variant: CascadeVariant) -> Result<Tensor<T>> {
    let (_, _, h, w) = slice.dims4()?;
    if prostate_mask.nx != w || prostate_mask.ny != h {
        return Err(Error::shape(format!(
            "mask {}x{} does not match slice {:?}",
            prostate_mask.nx,
            prostate_mask.ny,
            slice.shape()
        )));
    }
    make_stage2_batch(slice, &prostate_mask.data, variant)
}

/// Preprocessing and bookkeeping options of [`segment_volume`].
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentOptions {
    /// Center-crop every slice to `crop x crop` before inference; labels are
    /// pasted back into the full frame.
    pub crop: Option<usize>,
    pub norm_scope: NormScope,
    /// Keep only the largest 6-connected prostate component.
    pub largest_component: bool,
    /// Slices processed concurrently.
    pub threads: usize,
    /// Keep per-stage probability maps and the unclipped CG mask.
    pub keep_debug: bool,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        SegmentOptions { crop: None, norm_scope: NormScope::Slice, largest_component: false, threads: 1, keep_debug: false }
    }
}

/// Per-stage outputs kept for debugging, in the cropped frame.
#[derive(Debug, Clone)]
pub struct DebugMaps {
    pub prostate_probability: Volume3D,
    pub cg_probability: Volume3D,
    /// Stage-2 mask before clipping to the prostate.
    pub cg_unclipped: BinaryMask3D,
}

#[derive(Debug, Clone)]
pub struct Segmentation {
    pub labels: LabelVolume,
    /// Stage-1 mask (after optional post-processing), full frame.
    pub prostate: BinaryMask3D,
    /// Wall-clock seconds of both stages, per slice.
    pub slice_seconds: Vec<f64>,
    pub debug: Option<DebugMaps>,
}

impl Segmentation {
    pub fn mean_slice_seconds(&self) -> f64 {
        self.slice_seconds.iter().sum::<f64>() / self.slice_seconds.len().max(1) as f64
    }
}

struct SliceResult {
    prostate: Vec<bool>,
    cg: Vec<bool>,
    p_prob: Vec<f64>,
    cg_prob: Vec<f64>,
    seconds: f64,
}

fn run_slice<T: Scalar>(model: &CascadeModel<T>, plane: &Plane<f64>) -> Result<SliceResult> {
    let start = Instant::now();
    let x = slice_tensor::<T>(plane);
    let (prostate, p_probs) = predict_mask(&model.stage1, &x)?;
    let s2 = make_stage2_input(&x, &prostate, model.variant)?;
    let (cg, cg_probs) = predict_mask(&model.stage2, &s2)?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(SliceResult {
        prostate: prostate.data,
        cg: cg.data,
        p_prob: p_probs.plane(0, 1).iter().map(|v| v.as_f64()).collect(),
        cg_prob: cg_probs.plane(0, 1).iter().map(|v| v.as_f64()).collect(),
        seconds,
    })
}

/// Segments a raw volume slice by slice along the axial axis.
///
/// Each slice is optionally center-cropped and z-normalized, then run through
/// both stages. Labels: 1 = central gland clipped to the prostate, 2 = the
/// rest of the prostate.
pub fn segment_volume<T: Scalar>(model: &CascadeModel<T>, volume: &Volume3D, opts: &SegmentOptions) -> Result<Segmentation> {
    let [nx, ny, nz] = volume.dims;
    let (cx, cy) = match opts.crop {
        Some(c) => {
            crop_offset(nx, c)?;
            crop_offset(ny, c)?;
            (c, c)
        }
        None => (nx, ny),
    };
    let cropped: Vec<Plane<f64>> =
        (0..nz).map(|z| center_crop(&volume.slice(z), cx, cy)).collect::<Result<_>>()?;
    let normalized = znormalize_volume(&Volume::from_slices(volume.spacing, &cropped)?, opts.norm_scope)?;
    let planes: Vec<Plane<f64>> = (0..nz).map(|z| normalized.slice(z)).collect();

    let run = |z: usize| run_slice(model, &planes[z]).map_err(|e| Error::invalid(format!("slice {z}: {e}")));
    let results: Vec<SliceResult> = if opts.threads <= 1 || nz < 2 {
        (0..nz).map(run).collect::<Result<_>>()?
    } else {
        let chunk = nz.div_ceil(opts.threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..nz)
                .step_by(chunk)
                .map(|start| s.spawn(move || (start..(start + chunk).min(nz)).map(run).collect::<Result<Vec<_>>>()))
                .collect();
            let mut all = Vec::with_capacity(nz);
            for h in handles {
                all.extend(h.join().expect("segmentation worker panicked")?);
            }
            Ok::<_, Error>(all)
        })?
    };

    let spacing = volume.spacing;
    let mut prostate_c = Volume::filled([cx, cy, nz], spacing, false);
    for (z, r) in results.iter().enumerate() {
        prostate_c.set_slice(z, &Plane { nx: cx, ny: cy, data: r.prostate.clone() })?;
    }
    if opts.largest_component {
        prostate_c = largest_component(&prostate_c);
    }
    let mut labels = Volume::filled(volume.dims, spacing, 0u8);
    let mut prostate = Volume::filled(volume.dims, spacing, false);
    for (z, r) in results.iter().enumerate() {
        let p = prostate_c.slice(z);
        let lab = Plane { nx: cx, ny: cy, data: compose_labels(&p.data, &r.cg)? };
        labels.set_slice(z, &uncrop(&lab, nx, ny, 0)?)?;
        prostate.set_slice(z, &uncrop(&p, nx, ny, false)?)?;
    }
    let slice_seconds: Vec<f64> = results.iter().map(|r| r.seconds).collect();
    let debug = opts.keep_debug.then(|| {
        let stack = |f: &dyn Fn(&SliceResult) -> Vec<f64>| Volume {
            dims: [cx, cy, nz],
            spacing,
            data: results.iter().flat_map(f).collect(),
        };
        DebugMaps {
            prostate_probability: stack(&|r| r.p_prob.clone()),
            cg_probability: stack(&|r| r.cg_prob.clone()),
            cg_unclipped: Volume { dims: [cx, cy, nz], spacing, data: results.iter().flat_map(|r| r.cg.clone()).collect() },
        }
    });
    let seg = Segmentation { labels, prostate, slice_seconds, debug };
    debug!("segmented {nz} slices");
    info!("mean per-slice inference time {:.4} s", seg.mean_slice_seconds());
    Ok(seg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cascade::mask::count;

    fn tiny(variant: CascadeVariant) -> CascadeModel<f64> {
        let arch = CascadeArch { depth: 2, base_channels: 2, ..Default::default() };
        CascadeModel::build(variant, &arch, &Rng::new(5)).unwrap()
    }

    fn noise(nx: usize, ny: usize, nz: usize, seed: u64) -> Volume3D {
        let mut rng = Rng::new(seed);
        Volume::new([nx, ny, nz], [1.0; 3], (0..nx * ny * nz).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn variants_parse_and_set_channels() {
        for v in CascadeVariant::ALL {
            assert_eq!(v.name().parse::<CascadeVariant>().unwrap(), v);
            let m = tiny(v);
            assert_eq!(m.stage2.config().in_channels, v.stage2_channels());
        }
        assert!("mres".parse::<CascadeVariant>().is_err());
        let m = tiny(CascadeVariant::SingleChannel);
        assert!(CascadeModel::new(CascadeVariant::MultiChannel, m.stage1, m.stage2).is_err());
    }

    #[test]
    fn random_model_gives_valid_mask() {
        let m = tiny(CascadeVariant::MultiChannel);
        let x = slice_tensor::<f64>(&noise(8, 8, 1, 1).slice(0));
        let mask = predict_prostate(&m, &x).unwrap();
        assert_eq!((mask.nx, mask.ny), (8, 8));
        let odd = slice_tensor::<f64>(&noise(6, 8, 1, 1).slice(0));
        assert!(predict_prostate(&m, &odd).is_err());
    }

    #[test]
    fn shifting_logits_keeps_argmax() {
        // softmax of (a + c, b + c) equals softmax of (a, b)
        let logits = Tensor::<f64>::from_f64(&[1, 2, 1, 3], &[0.3, -1.0, 2.0, 0.1, 0.5, 2.0]).unwrap();
        let shifted = logits.map(|v| v + 17.0);
        let a = argmax_mask(&crate::ops::softmax_channels(&logits).unwrap()).unwrap();
        let b = argmax_mask(&crate::ops::softmax_channels(&shifted).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.data, vec![false, true, false]);
    }

    #[test]
    fn stage2_inputs() {
        let mut rng = Rng::new(2);
        let img = Plane::new(4, 4, (0..16).map(|_| rng.normal()).collect()).unwrap();
        let x = slice_tensor::<f64>(&img);
        let ones = Plane::filled(4, 4, true);
        let multi = make_stage2_input(&x, &ones, CascadeVariant::MultiChannel).unwrap();
        assert_eq!(multi.shape(), &[1, 2, 4, 4]);
        assert_eq!(multi.plane(0, 0), x.data());
        assert!(multi.plane(0, 1).iter().all(|&v| v == 1.0));
        let zeros = Plane::filled(4, 4, false);
        let single = make_stage2_input(&x, &zeros, CascadeVariant::SingleChannel).unwrap();
        assert!(single.data().iter().all(|&v| v == 0.0));
        let m = Plane::new(4, 4, (0..16).map(|_| rng.bernoulli(0.5)).collect()).unwrap();
        for v in [CascadeVariant::SingleChannel, CascadeVariant::UnetBaseline] {
            let out = make_stage2_input(&x, &m, v).unwrap();
            for i in 0..16 {
                assert_eq!(out.data()[i], if m.data[i] { img.data[i] } else { 0.0 });
            }
        }
        assert!(make_stage2_input(&x, &Plane::filled(3, 4, true), CascadeVariant::MultiChannel).is_err());
        let two = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
        assert!(make_stage2_input(&two, &ones, CascadeVariant::SingleChannel).is_err());
    }

    #[test]
    fn labels_cover_stage1_mask_and_repeat_bitwise() {
        let m = tiny(CascadeVariant::MultiChannel);
        let v = noise(8, 8, 3, 4);
        let opts = SegmentOptions { keep_debug: true, ..Default::default() };
        let a = segment_volume(&m, &v, &opts).unwrap();
        for (l, p) in a.labels.data.iter().zip(&a.prostate.data) {
            assert_eq!(*l != 0, *p);
        }
        assert_eq!(a.slice_seconds.len(), 3);
        let b = segment_volume(&m, &v, &SegmentOptions { threads: 2, ..Default::default() }).unwrap();
        assert_eq!(a.labels, b.labels);
        let d = a.debug.unwrap();
        assert_eq!(d.cg_probability.dims, [8, 8, 3]);
    }

    #[test]
    fn empty_stage1_gives_background() {
        let mut m = tiny(CascadeVariant::SingleChannel);
        // force the stage-1 head to always prefer background
        for p in m.stage1.parameters_mut() {
            if p.name == "head.weight" {
                p.value.fill(0.0);
            }
            if p.name == "head.bias" {
                p.value = Tensor::from_f64(&[2], &[5.0, -5.0]).unwrap();
            }
        }
        let seg = segment_volume(&m, &noise(8, 8, 2, 6), &SegmentOptions::default()).unwrap();
        assert!(seg.labels.data.iter().all(|&l| l == 0));
        assert_eq!(count(&seg.prostate.data), 0);
    }

    #[test]
    fn crop_pastes_back_into_full_frame() {
        let m = tiny(CascadeVariant::MultiChannel);
        let seg = segment_volume(&m, &noise(12, 10, 2, 7), &SegmentOptions { crop: Some(8), ..Default::default() }).unwrap();
        assert_eq!(seg.labels.dims, [12, 10, 2]);
        // outside the 8x8 window everything is background
        assert!((0..10).all(|y| seg.labels.get(0, y, 0) == 0 && seg.labels.get(11, y, 1) == 0));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny(CascadeVariant::UnetBaseline);
        m.save(dir.path()).unwrap();
        let back = CascadeModel::<f64>::load(dir.path()).unwrap();
        assert_eq!(back.variant, m.variant);
        let v = noise(8, 8, 1, 8);
        let o = SegmentOptions::default();
        assert_eq!(segment_volume(&back, &v, &o).unwrap().labels, segment_volume(&m, &v, &o).unwrap().labels);
    }
}
