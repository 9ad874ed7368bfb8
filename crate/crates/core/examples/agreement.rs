//! Bland-Altman agreement of predicted and reference prostate volumes.

use cascade_seg::metrics::{agreement_svg, bland_altman, TpvRecord};

fn main() -> cascade_seg::Result<()> {
    let records = [
        TpvRecord::new("a", 31.2, 32.0),
        TpvRecord::new("b", 45.9, 44.1),
        TpvRecord::new("c", 27.4, 28.9),
        TpvRecord::new("d", 60.3, 58.7),
        TpvRecord::new("e", 38.8, 40.2),
        TpvRecord::new("f", 52.0, 51.1),
    ];
    for r in &records {
        println!("{}: {:.1} mL vs {:.1} mL ({:.2}% off)", r.subject_id, r.gt_ml, r.pred_ml, r.percent_diff);
    }
    let pairs: Vec<(f64, f64)> = records.iter().map(|r| (r.gt_ml, r.pred_ml)).collect();
    let s = bland_altman(&pairs)?;
    println!("mean difference {:.3} mL, sd {:.3} mL", s.mean_diff, s.sd_diff);
    println!("limits of agreement [{:.3}, {:.3}] mL", s.loa_low, s.loa_high);
    println!("RPC {:.3} mL ({:.2}%), CV {:.2}%, r = {:.4}", s.rpc, s.rpc_pct, s.cv_pct, s.pearson_r);
    let svg = agreement_svg(&pairs, &s);
    let path = std::env::temp_dir().join("agreement_example.svg");
    std::fs::write(&path, svg)?;
    println!("plot written to {}", path.display());
    Ok(())
}
