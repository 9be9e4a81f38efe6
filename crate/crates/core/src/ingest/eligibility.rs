use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::model::{CanonicalParticipant, EligibilityResult, YearsSinceQuit};

pub const AGE_RANGE: &str = "AGE_RANGE";
pub const PACK_YEARS: &str = "PACK_YEARS";
pub const YEARS_SINCE_QUIT: &str = "YEARS_SINCE_QUIT";
pub const CONSENT: &str = "CONSENT";

/// Screening conditions. Defaults follow common low-dose CT lung screening
/// criteria.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EligibilityRules {
    pub ruleset_version: String,
    pub min_age: u32,
    pub max_age: u32,
    pub min_pack_years: f64,
    pub max_years_since_quit: f64,
    pub require_consent: bool,
}

impl Default for EligibilityRules {
    fn default() -> Self {
        EligibilityRules {
            ruleset_version: "lcs-2021".into(),
            min_age: 50,
            max_age: 80,
            min_pack_years: 20.0,
            max_years_since_quit: 15.0,
            require_consent: true,
        }
    }
}

/// Completed years between `birth` and `as_of`.
pub fn age_on(birth: NaiveDate, as_of: NaiveDate) -> i32 {
    let mut age = as_of.year() - birth.year();
    if (as_of.month(), as_of.day()) < (birth.month(), birth.day()) {
        age -= 1;
    }
    age
}

/// Evaluates every rule and reports all failures, in rule order.
pub fn check_eligibility(
    p: &CanonicalParticipant,
    rules: &EligibilityRules,
    as_of: NaiveDate,
) -> EligibilityResult {
    let mut reasons = Vec::new();
    let age = age_on(p.birth_date, as_of);
    if age < rules.min_age as i32 || age > rules.max_age as i32 {
        reasons.push(AGE_RANGE.to_string());
    }
    if p.smoking_pack_years < rules.min_pack_years {
        reasons.push(PACK_YEARS.to_string());
    }
    if let YearsSinceQuit::Years(y) = p.years_since_quit {
        if y > rules.max_years_since_quit {
            reasons.push(YEARS_SINCE_QUIT.to_string());
        }
    }
    if rules.require_consent && !p.consent {
        reasons.push(CONSENT.to_string());
    }
    EligibilityResult {
        eligible: reasons.is_empty(),
        reasons,
        evaluated_at: p.registered_at,
        ruleset_version: rules.ruleset_version.clone(),
    }
}
