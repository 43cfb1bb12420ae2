use std::fmt::Write;

use cyclebnn::metrics::CostReport;

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

pub fn to_csv(r: &CostReport) -> String {
    let mut s = String::from("metric,value\n");
    let _ = writeln!(s, "convention,{}", quote(&r.convention));
    let _ = writeln!(s, "epochs,{}", r.epochs);
    let _ = writeln!(s, "samples_per_epoch,{}", r.samples_per_epoch);
    let _ = writeln!(s, "full_precision_training_macs,{}", r.full_precision_macs);
    let _ = writeln!(s, "regime_training_macs,{}", r.regime_macs);
    let _ = writeln!(s, "reduction_percent,{}", r.reduction_percent);
    let _ = writeln!(s, "memory_ratio,{}", r.memory_ratio);
    s
}

pub fn to_text(r: &CostReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "accounting convention: {}", r.convention);
    let _ = writeln!(s);
    let _ = writeln!(s, "epochs:                        {}", r.epochs);
    let _ = writeln!(s, "samples per epoch:             {}", r.samples_per_epoch);
    let _ = writeln!(s, "training MACs, 32-bit:         {:.4e}", r.full_precision_macs);
    let _ = writeln!(s, "training MACs, this regime:    {:.4e}", r.regime_macs);
    let _ = writeln!(s, "reduction:                     {:.2}%", r.reduction_percent);
    let _ = writeln!(s, "memory usage vs 32-bit:        {}x", r.memory_ratio);
    s
}
