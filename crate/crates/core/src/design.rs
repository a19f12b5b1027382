//! Factor space and full-factorial vignette enumeration.
//!
//! A [`Design`] is loaded from a TOML file so that scenario and factor
//! wording can change without a rebuild. Factor order in the file is the
//! canonical order: it fixes the bit positions of vignette identifiers,
//! the column order of design matrices and the row order of tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DesignError;

/// Token replaced by the rendered factor block in every scenario template.
pub const ADDITION_PLACEHOLDER: &str = "ADDITION";

/// Setting of one binary factor. `Low` encodes as 0, `High` as 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Low,
    High,
}

impl Level {
    pub fn bit(self) -> u8 {
        match self {
            Level::Low => 0,
            Level::High => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::High => "high",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub key: String,
    /// Heading shown above the level line, e.g. "GDP growth effect".
    pub display_name: String,
    /// Row label in regression tables; defaults to "<display_name>, high".
    #[serde(default)]
    pub table_label: Option<String>,
    pub high_text: String,
    pub low_text: String,
}

impl Factor {
    pub fn level_text(&self, level: Level) -> &str {
        match level {
            Level::High => &self.high_text,
            Level::Low => &self.low_text,
        }
    }

    pub fn row_label(&self) -> String {
        self.table_label
            .clone()
            .unwrap_or_else(|| format!("{}, high", self.display_name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub key: String,
    #[serde(default)]
    pub display_name: Option<String>,
    pub template: String,
}

impl Scenario {
    pub fn label(&self) -> &str {
        self.display_name.as_deref().unwrap_or(&self.key)
    }
}

/// How the factor block is laid out inside a scenario template.
///
/// `block` is applied once per factor with `{name}` and `{level}`
/// substituted; blocks are joined with `separator` and wrapped in
/// `prefix`/`suffix`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderStyle {
    pub block: String,
    #[serde(default)]
    pub separator: String,
    #[serde(default)]
    pub prefix: String,
    #[serde(default)]
    pub suffix: String,
}

impl Default for RenderStyle {
    fn default() -> Self {
        RenderStyle {
            block: "{name}:\n• {level}".to_string(),
            separator: "\n".to_string(),
            prefix: String::new(),
            suffix: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rendering {
    pub active: String,
    pub styles: BTreeMap<String, RenderStyle>,
}

impl Default for Rendering {
    fn default() -> Self {
        let mut styles = BTreeMap::new();
        styles.insert("plain".to_string(), RenderStyle::default());
        Rendering {
            active: "plain".to_string(),
            styles,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Design {
    #[serde(rename = "scenario")]
    pub scenarios: Vec<Scenario>,
    #[serde(rename = "factor", default)]
    pub factors: Vec<Factor>,
    #[serde(default)]
    pub rendering: Rendering,
}

impl Design {
    pub fn new(scenarios: Vec<Scenario>, factors: Vec<Factor>) -> Result<Self, DesignError> {
        let design = Design {
            scenarios,
            factors,
            rendering: Rendering::default(),
        };
        design.validate()?;
        Ok(design)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, DesignError> {
        let design: Design = toml::from_str(text).map_err(|e| DesignError::Parse(e.to_string()))?;
        design.validate()?;
        Ok(design)
    }

    pub fn load(path: &Path) -> Result<Self, DesignError> {
        let text = std::fs::read_to_string(path).map_err(|source| DesignError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        if self.scenarios.is_empty() {
            return Err(DesignError::Invalid("design has no scenarios".into()));
        }
        let mut seen = BTreeSet::new();
        for s in &self.scenarios {
            check_identifier(&s.key)?;
            if !seen.insert(s.key.as_str()) {
                return Err(DesignError::Invalid(format!("duplicate scenario key `{}`", s.key)));
            }
            let hits = s.template.matches(ADDITION_PLACEHOLDER).count();
            if hits != 1 {
                return Err(DesignError::Invalid(format!(
                    "scenario `{}` template must contain {ADDITION_PLACEHOLDER} exactly once (found {hits})",
                    s.key
                )));
            }
        }
        let mut seen = BTreeSet::new();
        for f in &self.factors {
            check_identifier(&f.key)?;
            if !seen.insert(f.key.as_str()) {
                return Err(DesignError::Invalid(format!("duplicate factor key `{}`", f.key)));
            }
            if f.high_text.is_empty() || f.low_text.is_empty() {
                return Err(DesignError::Invalid(format!("factor `{}` has an empty level text", f.key)));
            }
            if f.high_text == f.low_text {
                return Err(DesignError::Invalid(format!(
                    "factor `{}` uses the same text for both levels",
                    f.key
                )));
            }
        }
        if !self.rendering.styles.contains_key(&self.rendering.active) {
            return Err(DesignError::Invalid(format!(
                "rendering style `{}` is not defined",
                self.rendering.active
            )));
        }
        Ok(())
    }

    pub fn scenario(&self, key: &str) -> Option<&Scenario> {
        self.scenarios.iter().find(|s| s.key == key)
    }

    pub fn factor_index(&self, key: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.key == key)
    }

    pub fn factor_keys(&self) -> impl Iterator<Item = &str> {
        self.factors.iter().map(|f| f.key.as_str())
    }

    pub fn render_style(&self) -> &RenderStyle {
        // validate() guarantees the active style exists
        &self.rendering.styles[&self.rendering.active]
    }

    /// Switches the active addition rendering (e.g. "plain" or "html").
    pub fn select_rendering(&mut self, name: &str) -> Result<(), DesignError> {
        if !self.rendering.styles.contains_key(name) {
            return Err(DesignError::Invalid(format!("rendering style `{name}` is not defined")));
        }
        self.rendering.active = name.to_string();
        Ok(())
    }

    /// Restricts the design to the listed scenarios, keeping design order.
    pub fn restrict_scenarios(&mut self, keys: &[String]) -> Result<(), DesignError> {
        for k in keys {
            if self.scenario(k).is_none() {
                return Err(DesignError::UnknownScenario(k.clone()));
            }
        }
        self.scenarios.retain(|s| keys.contains(&s.key));
        Ok(())
    }
}

fn check_identifier(key: &str) -> Result<(), DesignError> {
    let ok = !key.is_empty()
        && key
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_');
    if ok {
        Ok(())
    } else {
        Err(DesignError::Invalid(format!(
            "`{key}` is not a valid key (use lowercase letters, digits and `_`)"
        )))
    }
}

/// One level per design factor.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FactorAssignment {
    pub levels: BTreeMap<String, Level>,
}

impl FactorAssignment {
    pub fn get(&self, key: &str) -> Option<Level> {
        self.levels.get(key).copied()
    }

    pub fn with(mut self, key: &str, level: Level) -> Self {
        self.levels.insert(key.to_string(), level);
        self
    }

    /// Every factor at `level`.
    pub fn uniform(factors: &[Factor], level: Level) -> Self {
        FactorAssignment {
            levels: factors.iter().map(|f| (f.key.clone(), level)).collect(),
        }
    }

    /// Checks that every design factor has a level and there are no extras.
    pub fn check_complete(&self, factors: &[Factor]) -> Result<(), DesignError> {
        for f in factors {
            if !self.levels.contains_key(&f.key) {
                return Err(DesignError::InvalidAssignment(format!("missing level for `{}`", f.key)));
            }
        }
        if self.levels.len() != factors.len() {
            let extra: Vec<&str> = self
                .levels
                .keys()
                .filter(|k| !factors.iter().any(|f| &f.key == *k))
                .map(String::as_str)
                .collect();
            return Err(DesignError::InvalidAssignment(format!(
                "unknown factor(s): {}",
                extra.join(", ")
            )));
        }
        Ok(())
    }

    /// Levels in design order as 0/1 bits.
    pub fn bits(&self, factors: &[Factor]) -> Result<Vec<u8>, DesignError> {
        self.check_complete(factors)?;
        Ok(factors.iter().map(|f| self.levels[&f.key].bit()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VignetteId(pub String);

impl VignetteId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VignetteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vignette {
    pub id: VignetteId,
    pub scenario: String,
    pub assignment: FactorAssignment,
}

/// `<scenario>-b<bits>`, bit i set iff factor i (design order) is High.
pub fn vignette_id(
    scenario_key: &str,
    assignment: &FactorAssignment,
    factors: &[Factor],
) -> Result<VignetteId, DesignError> {
    let bits: String = assignment
        .bits(factors)?
        .into_iter()
        .map(|b| if b == 1 { '1' } else { '0' })
        .collect();
    Ok(VignetteId(format!("{scenario_key}-b{bits}")))
}

/// All scenario × level combinations. Within a scenario, assignments follow
/// binary counting with factor 0 as the most significant bit, so ids come
/// out in lexicographic order.
pub fn enumerate_vignettes(design: &Design) -> Vec<Vignette> {
    let k = design.factors.len();
    let per_scenario = 1usize << k;
    let mut out = Vec::with_capacity(design.scenarios.len() * per_scenario);
    for scenario in &design.scenarios {
        for code in 0..per_scenario {
            let levels = design
                .factors
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    let level = if (code >> (k - 1 - i)) & 1 == 1 {
                        Level::High
                    } else {
                        Level::Low
                    };
                    (f.key.clone(), level)
                })
                .collect();
            let assignment = FactorAssignment { levels };
            let id = vignette_id(&scenario.key, &assignment, &design.factors)
                .expect("enumerated assignment is complete");
            out.push(Vignette {
                id,
                scenario: scenario.key.clone(),
                assignment,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LevelCount {
    pub factor: String,
    pub low: usize,
    pub high: usize,
}

/// Joint counts for a factor pair, indexed `[level_a][level_b]` with Low=0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PairCount {
    pub a: String,
    pub b: String,
    pub cells: [[usize; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BalanceReport {
    pub n: usize,
    pub levels: Vec<LevelCount>,
    pub pairs: Vec<PairCount>,
    pub deviations: Vec<String>,
}

impl BalanceReport {
    pub fn is_balanced(&self) -> bool {
        self.deviations.is_empty()
    }
}

/// Level and pairwise joint counts over a vignette list. Factors are the
/// union of assignment keys in sorted order. A full factorial has every
/// level at N/2 and every pair cell at N/4; anything else is flagged.
pub fn balance_report(vignettes: &[Vignette]) -> BalanceReport {
    let n = vignettes.len();
    let factors: Vec<&str> = vignettes
        .iter()
        .flat_map(|v| v.assignment.levels.keys().map(String::as_str))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut deviations = Vec::new();

    let bit = |v: &Vignette, f: &str| v.assignment.get(f).map(|l| l.bit() as usize);

    let mut levels = Vec::with_capacity(factors.len());
    for &f in &factors {
        let mut counts = [0usize; 2];
        let mut missing = 0;
        for v in vignettes {
            match bit(v, f) {
                Some(b) => counts[b] += 1,
                None => missing += 1,
            }
        }
        if missing > 0 {
            deviations.push(format!("{f}: missing from {missing} vignette(s)"));
        }
        if !n.is_multiple_of(2) || counts[0] != n / 2 || counts[1] != n / 2 {
            deviations.push(format!("{f}: low={} high={} (n={n})", counts[0], counts[1]));
        }
        levels.push(LevelCount {
            factor: f.to_string(),
            low: counts[0],
            high: counts[1],
        });
    }

    let mut pairs = Vec::new();
    for (i, &a) in factors.iter().enumerate() {
        for &b in &factors[i + 1..] {
            let mut cells = [[0usize; 2]; 2];
            for v in vignettes {
                if let (Some(x), Some(y)) = (bit(v, a), bit(v, b)) {
                    cells[x][y] += 1;
                }
            }
            let even = n.is_multiple_of(4) && cells.iter().flatten().all(|&c| c == n / 4);
            if !even {
                deviations.push(format!("{a}×{b}: cells {cells:?} (n={n})"));
            }
            pairs.push(PairCount {
                a: a.to_string(),
                b: b.to_string(),
                cells,
            });
        }
    }

    BalanceReport {
        n,
        levels,
        pairs,
        deviations,
    }
}
