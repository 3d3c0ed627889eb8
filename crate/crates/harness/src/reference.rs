//! Published reference values, embedded verbatim for side-by-side reports.
//!
//! These numbers were measured on clinical IVUS data with undisclosed
//! training settings. They are printed next to our results and never used
//! as pass/fail thresholds.

use crate::config::ExperimentKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceTable {
    pub id: &'static str,
    pub caption: &'static str,
    pub columns: &'static [&'static str],
    pub rows: &'static [(&'static str, &'static [&'static str])],
}

impl ReferenceTable {
    pub fn value(&self, row: &str, column: usize) -> Option<f64> {
        let (_, values) = self.rows.iter().find(|(r, _)| *r == row)?;
        values.get(column)?.parse().ok()
    }
}

pub const LOSS_FUNCTIONS: ReferenceTable = ReferenceTable {
    id: "loss_functions",
    caption: "Loss-function ablation (JM, PAD in %, HD and AD in mm)",
    columns: &[
        "Counter loss",
        "L1 loss",
        "L2 loss",
        "Confrontations and L1 losses",
        "Confrontation and L2 loss",
    ],
    rows: &[
        ("LU-JM", &["0.8968", "0.9010", "0.9182", "0.9177", "0.9206"]),
        ("MA-JM", &["0.9185", "0.9203", "0.9217", "0.9290", "0.9223"]),
        ("LU-PAD/%", &["4.8114", "4.4253", "3.9897", "3.9204", "3.3066"]),
        ("MA-PAD/%", &["5.4945", "5.7321", "5.7321", "4.8411", "10.7712"]),
        ("LU-HD/mm", &["0.2813", "0.2120", "0.2026", "0.2093", "0.2020"]),
        ("MA-HD/mm", &["0.2761", "0.4023", "0.2177", "0.2166", "0.2258"]),
        ("LU-AD/mm", &["0.0816", "0.0764", "0.0586", "0.0634", "0.0566"]),
        ("MA-AD/mm", &["0.0870", "0.0662", "0.0725", "0.0609", "0.0599"]),
    ],
};

const BETA_GRID: &[&str] = &["1", "2", "4", "8", "16", "32", "64", "128"];

pub const BETA_L1: ReferenceTable = ReferenceTable {
    id: "beta_l1",
    caption: "Reconstruction weight sweep with L1 (JM)",
    columns: BETA_GRID,
    rows: &[
        ("LU-JM", &["0.8811", "0.8910", "0.8910", "0.9009", "0.9108", "0.9108", "0.9108", "0.9108"]),
        ("MA-JM", &["0.9108", "0.9108", "0.9207", "0.9207", "0.9207", "0.9207", "0.9306", "0.9306"]),
    ],
};

pub const BETA_L2: ReferenceTable = ReferenceTable {
    id: "beta_l2",
    caption: "Reconstruction weight sweep with L2 (JM)",
    columns: BETA_GRID,
    rows: &[
        ("LU-JM", &["0.8910", "0.9207", "0.9207", "0.9108", "0.9108", "0.9207", "0.9207", "0.9207"]),
        ("MA-JM", &["0.9108", "0.9207", "0.9207", "0.9207", "0.9207", "0.9207", "0.9207", "0.9207"]),
    ],
};

pub const GENERATORS: ReferenceTable = ReferenceTable {
    id: "generators",
    caption: "Generator structures (JM, model size in millions of parameters)",
    columns: &[
        "Pix2Pix-1(U-Net)",
        "Pix2Pix-2(E-D)",
        "Method 1(no inputs)",
        "Method 2(within puts)",
    ],
    rows: &[
        ("LU-JM", &["0.9128", "0.9045", "0.9090", "0.9177"]),
        ("MA-JM", &["0.9279", "0.9195", "0.9196", "0.9290"]),
        ("Model size /M", &["226.4130", "79.7940", "158.6970", "158.6970"]),
    ],
};

pub const ALL: [ReferenceTable; 4] = [LOSS_FUNCTIONS, BETA_L1, BETA_L2, GENERATORS];

/// The β values of the reconstruction-weight sweeps.
pub const BETAS: [f64; 8] = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0];

pub fn table_for(kind: ExperimentKind) -> &'static ReferenceTable {
    match kind {
        ExperimentKind::LossAblation => &LOSS_FUNCTIONS,
        ExperimentKind::BetaSweepL1 => &BETA_L1,
        ExperimentKind::BetaSweepL2 => &BETA_L2,
        ExperimentKind::GeneratorComparison => &GENERATORS,
    }
}

/// Row label used by the reference tables for one of our metric columns.
pub fn row_for_metric(column: &str) -> Option<&'static str> {
    Some(match column {
        "lu_jm" => "LU-JM",
        "ma_jm" => "MA-JM",
        "lu_pad" => "LU-PAD/%",
        "ma_pad" => "MA-PAD/%",
        "lu_hd" => "LU-HD/mm",
        "ma_hd" => "MA-HD/mm",
        "lu_ad" => "LU-AD/mm",
        "ma_ad" => "MA-AD/mm",
        _ => return None,
    })
}

/// Tab-separated rendering of every table; checked against a transcribed
/// fixture.
pub fn render_tsv() -> String {
    let mut out = String::new();
    for t in ALL {
        out.push_str(&format!("# {}\n", t.id));
        out.push_str("index");
        for c in t.columns {
            out.push('\t');
            out.push_str(c);
        }
        out.push('\n');
        for (row, values) in t.rows {
            out.push_str(row);
            for v in *values {
                out.push('\t');
                out.push_str(v);
            }
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_match_the_transcribed_fixture() {
        assert_eq!(render_tsv(), include_str!("../fixtures/reference_tables.tsv"));
    }

    #[test]
    fn rows_are_rectangular() {
        for t in ALL {
            for (row, values) in t.rows {
                assert_eq!(values.len(), t.columns.len(), "{} {row}", t.id);
                assert!(values.iter().all(|v| v.parse::<f64>().is_ok()));
            }
        }
    }

    #[test]
    fn spot_values() {
        assert_eq!(LOSS_FUNCTIONS.value("LU-JM", 4), Some(0.9206));
        assert_eq!(LOSS_FUNCTIONS.value("LU-HD/mm", 4), Some(0.2020));
        assert_eq!(LOSS_FUNCTIONS.value("LU-JM", 0), Some(0.8968));
        assert_eq!(GENERATORS.value("Model size /M", 0), Some(226.4130));
        assert_eq!(GENERATORS.value("Model size /M", 1), Some(79.7940));
        assert_eq!(BETA_L1.value("LU-JM", 5), Some(0.9108));
        assert_eq!(BETA_L2.value("LU-HD/mm", 0), None);
    }
}
