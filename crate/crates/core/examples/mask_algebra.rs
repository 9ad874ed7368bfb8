//! Peripheral zone by exclusion, and composition into a label map.

use cascade_seg::cascade::{compose_labels, derive_peripheral_zone};
use cascade_seg::dataio::Plane;

fn show(name: &str, nx: usize, cells: impl Iterator<Item = char>) {
    println!("{name}:");
    let cells: Vec<char> = cells.collect();
    for row in cells.chunks(nx) {
        println!("  {}", row.iter().collect::<String>());
    }
}

fn main() -> cascade_seg::Result<()> {
    let (nx, ny) = (12, 8);
    let inside = |x: usize, y: usize, cx: f64, cy: f64, r: f64| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r;
    let grid = |f: &dyn Fn(usize, usize) -> bool| (0..nx * ny).map(|i| f(i % nx, i / nx)).collect::<Vec<_>>();
    let prostate = Plane::new(nx, ny, grid(&|x, y| inside(x, y, 5.5, 3.5, 3.6)))?;
    // deliberately pokes out of the prostate on the right
    let cg = Plane::new(nx, ny, grid(&|x, y| inside(x, y, 7.0, 3.0, 2.3)))?;

    let pz = derive_peripheral_zone(&prostate, &cg)?;
    let mark = |m: &Plane<bool>| m.data.iter().map(|&b| if b { '#' } else { '.' }).collect::<Vec<_>>().into_iter();
    show("prostate", nx, mark(&prostate));
    show("central gland (raw)", nx, mark(&cg));
    show("peripheral zone", nx, mark(&pz));
    let labels = compose_labels(&prostate.data, &cg.data)?;
    show("labels (0 background, 1 CG, 2 PZ)", nx, labels.iter().map(|&l| char::from(b'0' + l)));
    Ok(())
}
