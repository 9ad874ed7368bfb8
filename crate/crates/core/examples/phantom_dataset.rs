//! Generate a few synthetic phantoms and report their anatomy.
//!
//! ```text
//! cargo run --example phantom_dataset
//! ```

use cascade_seg::cascade::Structure;
use cascade_seg::dataio::{generate_phantom, PhantomSpec};
use cascade_seg::metrics::{mask_volume_ml, total_prostate_volume};
use cascade_seg::rng::Rng;

fn main() -> cascade_seg::Result<()> {
    let spec = PhantomSpec::default();
    let master = Rng::new(7);
    println!("{:>3} {:>10} {:>10} {:>8} {:>8}", "i", "analytic", "voxelized", "cg mL", "pz mL");
    for i in 0..5 {
        let (image, labels, geometry) = generate_phantom(&spec, &mut master.derive("phantom", i))?;
        let cg = mask_volume_ml(&Structure::CentralGland.mask(&labels));
        let pz = mask_volume_ml(&Structure::PeripheralZone.mask(&labels));
        println!(
            "{i:>3} {:>10.3} {:>10.3} {cg:>8.3} {pz:>8.3}",
            geometry.prostate_ml(),
            total_prostate_volume(&labels)
        );
        if i == 0 {
            let mid = image.slice(image.dims[2] / 2);
            let (lo, hi) = mid.data.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            println!("    mid slice intensity range [{lo:.3}, {hi:.3}]");
        }
    }
    Ok(())
}
