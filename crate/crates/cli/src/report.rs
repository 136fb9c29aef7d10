//! CSV writers. Every float is printed with six decimals.

use std::io::{self, Write};

use fsl_core::analytics::{ArchSpec, BoundRow, CostAlgorithm, CostReport, BITS_PER_MIB};
use fsl_core::protocols::RoundRecord;

pub const RESULTS_HEADER: &str = "round,mean_acc,std_acc,min_acc,max_acc,upload_MiB,download_MiB";
pub const BOUND_HEADER: &str = "alpha,p,bound";
pub const COST_HEADER: &str = "arch,algorithm,upload_bits,download_bits,upload_MiB,download_MiB";

pub fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

pub fn write_results<W: Write>(mut w: W, records: &[RoundRecord]) -> io::Result<()> {
    writeln!(w, "{RESULTS_HEADER}")?;
    for r in records {
        let (mean, std, min, max) = match r.accuracy {
            Some(a) => (a.mean, a.std, a.min, a.max),
            None => (f64::NAN, f64::NAN, f64::NAN, f64::NAN),
        };
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.round,
            fmt6(mean),
            fmt6(std),
            fmt6(min),
            fmt6(max),
            fmt6(r.upload_bits / BITS_PER_MIB),
            fmt6(r.download_bits / BITS_PER_MIB),
        )?;
    }
    Ok(())
}

pub fn write_bound<W: Write>(mut w: W, rows: &[BoundRow]) -> io::Result<()> {
    writeln!(w, "{BOUND_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{}", fmt6(r.alpha), fmt6(r.p), fmt6(r.bound))?;
    }
    Ok(())
}

pub fn write_costs<W: Write>(
    mut w: W,
    arch: &ArchSpec,
    rows: &[(CostAlgorithm, CostReport)],
) -> io::Result<()> {
    writeln!(w, "{COST_HEADER}")?;
    for (alg, c) in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            arch.name,
            alg.label(),
            fmt6(c.upload_bits),
            fmt6(c.download_bits),
            fmt6(c.upload_mib()),
            fmt6(c.download_mib()),
        )?;
    }
    Ok(())
}
