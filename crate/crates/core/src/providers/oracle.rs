use std::collections::BTreeMap;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Query, RawResponse, Respondent};
use crate::design::{Design, Level, Vignette};
use crate::error::ProviderError;

/// Planted linear preferences for the simulated respondent.
///
/// Score = base + scenario offset + Σ weight over High factors + N(0, σ²),
/// rounded and clamped to `0..=100`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentModel {
    pub base: f64,
    pub weights: BTreeMap<String, f64>,
    #[serde(default)]
    pub scenario_offsets: BTreeMap<String, f64>,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl LatentModel {
    /// Checks that weights are keyed exactly by the design factors and that
    /// offsets only name design scenarios.
    pub fn check_against(&self, design: &Design) -> Result<(), ProviderError> {
        for f in &design.factors {
            if !self.weights.contains_key(&f.key) {
                return Err(ProviderError::ModelMismatch(format!("no weight for factor `{}`", f.key)));
            }
        }
        if let Some(extra) = self.weights.keys().find(|k| design.factor_index(k).is_none()) {
            return Err(ProviderError::ModelMismatch(format!("weight for unknown factor `{extra}`")));
        }
        if let Some(extra) = self.scenario_offsets.keys().find(|k| design.scenario(k).is_none()) {
            return Err(ProviderError::ModelMismatch(format!("offset for unknown scenario `{extra}`")));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(ProviderError::ModelMismatch(format!("noise_sd must be >= 0, got {}", self.noise_sd)));
        }
        Ok(())
    }
}

/// Noiseless systematic score; no clamping.
pub fn latent_score(model: &LatentModel, vignette: &Vignette) -> Result<f64, ProviderError> {
    let mut score = model.base + model.scenario_offsets.get(&vignette.scenario).copied().unwrap_or(0.0);
    for (key, level) in &vignette.assignment.levels {
        let w = model
            .weights
            .get(key)
            .ok_or_else(|| ProviderError::ModelMismatch(format!("no weight for factor `{key}`")))?;
        if *level == Level::High {
            score += w;
        }
    }
    Ok(score)
}

/// Standard normal draw keyed by (seed, vignette id, run index). Independent
/// of call order, so concurrent and resumed runs see identical noise.
fn keyed_normal(seed: u64, vignette_id: &str, run_index: u32) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update([0x1f]);
    h.update(vignette_id.as_bytes());
    h.update([0x1f]);
    h.update(run_index.to_le_bytes());
    let key: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    StandardNormal.sample(&mut rng)
}

pub fn mock_respond(model: &LatentModel, vignette: &Vignette, run_index: u32) -> Result<RawResponse, ProviderError> {
    let latent = latent_score(model, vignette)?;
    let noise = if model.noise_sd > 0.0 {
        model.noise_sd * keyed_normal(model.rng_seed, vignette.id.as_str(), run_index)
    } else {
        0.0
    };
    let score = (latent + noise).round().clamp(0.0, 100.0) as i64;
    Ok(RawResponse {
        text: score.to_string(),
        latency: Duration::ZERO,
        provider: "oracle".to_string(),
        transport_meta: r#"{"provider":"oracle"}"#.to_string(),
    })
}

#[derive(Debug, Clone)]
pub struct OracleRespondent {
    pub model: LatentModel,
}

impl OracleRespondent {
    pub fn new(model: LatentModel) -> Self {
        OracleRespondent { model }
    }
}

impl Respondent for OracleRespondent {
    fn provider(&self) -> &str {
        "oracle"
    }

    fn respond(&self, query: &Query<'_>) -> Result<RawResponse, ProviderError> {
        mock_respond(&self.model, query.vignette, query.run_index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::tests::toy_design;
    use crate::design::{enumerate_vignettes, FactorAssignment};
    use crate::parser::parse_score;

    fn flat(base: f64, keys: &[&str]) -> LatentModel {
        LatentModel {
            base,
            weights: keys.iter().map(|k| (k.to_string(), 0.0)).collect(),
            scenario_offsets: BTreeMap::new(),
            noise_sd: 0.0,
            rng_seed: 7,
        }
    }

    const KEYS: [&str; 7] = ["growth", "inequality", "environment", "debt", "inflation", "unemployment", "finstability"];

    #[test]
    fn zero_weights_give_base() {
        let d = toy_design(&["fiscal"], &KEYS);
        let m = flat(50.0, &KEYS);
        for v in enumerate_vignettes(&d) {
            assert_eq!(latent_score(&m, &v).unwrap(), 50.0);
        }
    }

    #[test]
    fn single_term() {
        let d = toy_design(&["fiscal"], &KEYS);
        let mut m = flat(60.0, &KEYS);
        m.weights.insert("unemployment".into(), -20.0);
        let v = Vignette {
            id: crate::design::VignetteId("fiscal-b0000010".into()),
            scenario: "fiscal".into(),
            assignment: FactorAssignment::uniform(&d.factors, Level::Low).with("unemployment", Level::High),
        };
        assert_eq!(latent_score(&m, &v).unwrap(), 40.0);
    }

    #[test]
    fn pooled_table_weights_best_case() {
        // Pooled scenario-FE coefficients; best case = growth high, all risks low.
        let d = toy_design(&["fiscal"], &KEYS);
        let weights = [2.938, -14.30, -14.45, -9.033, -7.087, -15.94, -12.70];
        let m = LatentModel {
            base: 61.4,
            weights: KEYS.iter().zip(weights).map(|(k, w)| (k.to_string(), w)).collect(),
            scenario_offsets: BTreeMap::new(),
            noise_sd: 0.0,
            rng_seed: 0,
        };
        let v = enumerate_vignettes(&d)
            .into_iter()
            .find(|v| v.id.as_str() == "fiscal-b1000000")
            .unwrap();
        assert!((latent_score(&m, &v).unwrap() - 64.338).abs() < 1e-12);
    }

    #[test]
    fn missing_weight_is_a_mismatch() {
        let d = toy_design(&["fiscal"], &["x", "y"]);
        let m = flat(50.0, &["x"]);
        let v = &enumerate_vignettes(&d)[0];
        assert!(matches!(latent_score(&m, v), Err(ProviderError::ModelMismatch(_))));
        assert!(m.check_against(&d).is_err());
    }

    #[test]
    fn rendering_and_clamp() {
        let d = toy_design(&["fiscal"], &["x"]);
        let v = &enumerate_vignettes(&d)[1];
        let mut m = flat(40.0, &["x"]);
        assert_eq!(mock_respond(&m, v, 0).unwrap().text, "40");
        m.base = 103.2;
        assert_eq!(mock_respond(&m, v, 0).unwrap().text, "100");
        m.base = -3.0;
        assert_eq!(mock_respond(&m, v, 0).unwrap().text, "0");
    }

    #[test]
    fn noisy_responses_are_deterministic_and_in_range() {
        let d = toy_design(&["fiscal", "trade"], &["x", "y", "z"]);
        let mut m = flat(50.0, &["x", "y", "z"]);
        m.noise_sd = 60.0;
        for v in enumerate_vignettes(&d) {
            for r in 0..20 {
                let a = mock_respond(&m, &v, r).unwrap();
                let b = mock_respond(&m, &v, r).unwrap();
                assert_eq!(a.text, b.text);
                let s = parse_score(&a.text).score().expect("oracle output parses");
                assert!(s <= 100);
            }
        }
    }

    #[test]
    fn keyed_noise_is_roughly_standard() {
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|r| keyed_normal(3, "fiscal-b0101010", r)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
        assert_ne!(keyed_normal(3, "a", 0), keyed_normal(4, "a", 0));
        assert_ne!(keyed_normal(3, "a", 0), keyed_normal(3, "b", 0));
    }
}
