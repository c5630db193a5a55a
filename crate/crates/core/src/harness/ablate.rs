//! Cumulative component ladder.

use std::fmt::Write as _;

use super::config::TrainConfig;
use super::train::{train, RunReport};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub label: &'static str,
    pub use_gradvac: bool,
    pub use_logitnorm: bool,
    pub use_ensemble: bool,
    pub use_dir: bool,
    pub report: RunReport,
}

/// The five toggle sets, each adding one component to the previous row.
pub fn ablation_ladder() -> [(&'static str, [bool; 4]); 5] {
    [
        ("baseline", [false, false, false, false]),
        ("+gradvac", [true, false, false, false]),
        ("+logitnorm", [true, true, false, false]),
        ("+ensemble", [true, true, true, false]),
        ("+dir", [true, true, true, true]),
    ]
}

/// Train every ladder row with the same seed and data. Rows run on
/// separate threads; each one owns its whole state.
pub fn ablate(cfg: &TrainConfig) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let ladder = ablation_ladder();
    let results: Vec<Result<RunReport>> = std::thread::scope(|s| {
        let handles: Vec<_> = ladder
            .iter()
            .map(|&(_, [gv, ln, en, dir])| {
                let row_cfg = cfg.clone().with_components(gv, ln, en, dir);
                s.spawn(move || train(&row_cfg))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("ablation worker panicked"))
            .collect()
    });
    ladder
        .iter()
        .zip(results)
        .map(|(&(label, [gv, ln, en, dir]), report)| {
            Ok(AblationRow {
                label,
                use_gradvac: gv,
                use_logitnorm: ln,
                use_ensemble: en,
                use_dir: dir,
                report: report?,
            })
        })
        .collect()
}

pub fn render_ablation_table(rows: &[AblationRow]) -> String {
    let mark = |b: bool| if b { "x" } else { "-" };
    let mut out = String::from("row         GV LN EN DiR     OA      AA   kappa\n");
    for r in rows {
        let p = r.report.scores.as_percentages();
        let _ = writeln!(
            out,
            "{:<11} {:>2} {:>2} {:>2} {:>3} {:>6.2} {:>7.2} {:>7.2}",
            r.label,
            mark(r.use_gradvac),
            mark(r.use_logitnorm),
            mark(r.use_ensemble),
            mark(r.use_dir),
            p.oa,
            p.aa,
            p.kappa
        );
    }
    out
}
