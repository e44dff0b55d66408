//! Bundled reference models.
//!
//! `dna` is the four-letter DNA chain with scores (-1, -1, 0, 1) for
//! (A, C, G, T); `iid_pm1` is the two-state ±1 walk with identical rows
//! (0.7, 0.3), whose ladder quantities have gambler's-ruin closed forms.

use crate::model::{ModelFile, ScoreModel};

pub const DNA_JSON: &str = include_str!("../fixtures/dna.json");
pub const IID_PM1_JSON: &str = include_str!("../fixtures/iid_pm1.json");

pub fn dna() -> ScoreModel {
    ScoreModel::from_file(&ModelFile::parse(DNA_JSON).expect("bundled model parses")).expect("bundled model is well formed")
}

pub fn iid_pm1() -> ScoreModel {
    ScoreModel::from_file(&ModelFile::parse(IID_PM1_JSON).expect("bundled model parses"))
        .expect("bundled model is well formed")
}

/// Two-state ±1 walk whose rows are both `(1 - p, p)`; `p` is the up-step probability.
pub fn iid_pm1_with(p: f64) -> ScoreModel {
    ScoreModel::new(vec!["a".into(), "b".into()], vec![vec![1.0 - p, p]; 2], vec![-1, 1]).expect("valid shape")
}

/// Looks up a bundled model by name.
pub fn by_name(name: &str) -> Option<ScoreModel> {
    match name {
        "dna" => Some(dna()),
        "iid_pm1" | "iid" => Some(iid_pm1()),
        _ => None,
    }
}
