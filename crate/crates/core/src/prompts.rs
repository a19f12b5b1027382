//! Vignette → prompt text.

use serde::{Deserialize, Serialize};

use crate::design::{Design, Factor, FactorAssignment, RenderStyle, Vignette, ADDITION_PLACEHOLDER};
use crate::error::DesignError;

const SURVEY_INSTRUCTION: &str = "You are answering an academic survey. Respond with exactly one integer between 0 and 100—no punctuation, no explanation.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
}

impl PromptBundle {
    /// Single-message form for endpoints without a system slot.
    pub fn inline(&self) -> String {
        format!("{}\n\n{}", self.system_text, self.user_text)
    }
}

/// The fixed survey instruction sent with every vignette.
pub fn render_system() -> &'static str {
    SURVEY_INSTRUCTION
}

/// Renders one block per factor in design order using `style`.
pub fn render_addition(
    assignment: &FactorAssignment,
    factors: &[Factor],
    style: &RenderStyle,
) -> Result<String, DesignError> {
    assignment.check_complete(factors)?;
    let blocks: Vec<String> = factors
        .iter()
        .map(|f| {
            let level = assignment.levels[&f.key];
            style
                .block
                .replace("{name}", &f.display_name)
                .replace("{level}", f.level_text(level))
        })
        .collect();
    Ok(format!("{}{}{}", style.prefix, blocks.join(&style.separator), style.suffix))
}

pub fn render_vignette(vignette: &Vignette, design: &Design) -> Result<PromptBundle, DesignError> {
    let scenario = design
        .scenario(&vignette.scenario)
        .ok_or_else(|| DesignError::UnknownScenario(vignette.scenario.clone()))?;
    let addition = render_addition(&vignette.assignment, &design.factors, design.render_style())?;
    Ok(PromptBundle {
        system_text: SURVEY_INSTRUCTION.to_string(),
        user_text: scenario.template.replacen(ADDITION_PLACEHOLDER, &addition, 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::tests::toy_design;
    use crate::design::{enumerate_vignettes, Level};

    #[test]
    fn system_text_is_exact() {
        assert_eq!(
            render_system(),
            "You are answering an academic survey. Respond with exactly one integer between 0 and 100\u{2014}no punctuation, no explanation."
        );
        assert!(render_system().contains('—'));
        assert!(!render_system().contains("100-no"));
        assert_eq!(render_system().len(), SURVEY_INSTRUCTION.len());
    }

    #[test]
    fn addition_follows_factor_order() {
        let d = toy_design(&["a"], &["x", "y"]);
        let a = FactorAssignment::default().with("x", Level::High).with("y", Level::Low);
        let text = render_addition(&a, &d.factors, &RenderStyle::default()).unwrap();
        assert_eq!(text, "X:\n• x goes up\nY:\n• y goes down");
        let again = render_addition(&a, &d.factors, &RenderStyle::default()).unwrap();
        assert_eq!(text, again);
    }

    #[test]
    fn incomplete_assignment_fails() {
        let d = toy_design(&["a"], &["x", "y"]);
        let a = FactorAssignment::default().with("x", Level::High);
        assert!(matches!(
            render_addition(&a, &d.factors, &RenderStyle::default()),
            Err(DesignError::InvalidAssignment(_))
        ));
    }

    #[test]
    fn unknown_scenario_fails() {
        let d = toy_design(&["a"], &["x"]);
        let mut v = enumerate_vignettes(&d).remove(0);
        v.scenario = "nope".into();
        assert!(matches!(render_vignette(&v, &d), Err(DesignError::UnknownScenario(_))));
    }

    #[test]
    fn placeholder_is_consumed() {
        let d = toy_design(&["a", "b"], &["x", "y", "z"]);
        for v in enumerate_vignettes(&d) {
            let b = render_vignette(&v, &d).unwrap();
            assert!(!b.user_text.contains(ADDITION_PLACEHOLDER));
            assert_eq!(b.system_text, render_system());
        }
    }
}
