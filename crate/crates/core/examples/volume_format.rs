//! Write an MVOL volume, dump its header, and read it back bit for bit.

use cascade_seg::dataio::{decode_mvol, MvolData, Volume};

fn main() -> cascade_seg::Result<()> {
    let data: Vec<f64> = (0..8).map(f64::from).collect();
    let volume = Volume::new([2, 2, 2], [1.0, 1.0, 2.0], data)?;
    let bytes = volume.encode_mvol();

    println!("{} bytes", bytes.len());
    for (what, range) in [("magic", 0..4), ("version", 4..8), ("dtype", 8..9), ("dims", 9..21), ("spacing", 21..45)] {
        let hex: Vec<String> = bytes[range].iter().map(|b| format!("{b:02x}")).collect();
        println!("{what:>8}: {}", hex.join(" "));
    }

    match decode_mvol(&bytes) {
        Ok(MvolData::Intensity(back)) => {
            assert_eq!(back, volume);
            println!("round trip ok, voxel volume {} mm^3", back.voxel_volume());
        }
        other => panic!("unexpected {other:?}"),
    }

    let mut corrupt = bytes.clone();
    corrupt[0] = b'X';
    println!("corrupted magic: {}", decode_mvol(&corrupt).unwrap_err());
    println!("truncated:       {}", decode_mvol(&bytes[..30]).unwrap_err());
    Ok(())
}
