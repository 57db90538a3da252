use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Jurisdiction, RightsCode, RightsError, UserContext};

/// The table shipped by default. Operators replace it with their own file.
pub const DEFAULT_RULES_CSV: &str = "\
code,jurisdiction,decision,min_access_level
PD,*,allow,
PDUS,US,allow,
PDUS,*,deny,
IC,*,deny,
OP,*,deny,
UND,*,deny,
";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "decision", content = "reason", rename_all = "snake_case")]
pub enum Decision {
    Allow,
    Deny(DenyReason),
}

impl Decision {
    pub fn is_allow(&self) -> bool {
        matches!(self, Decision::Allow)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenyReason {
    /// Code absent from the rule table.
    UnknownCode,
    /// Allowed somewhere, but not where the user is.
    Jurisdiction,
    /// Rule requires a higher user access level.
    AccessLevel,
    /// Not open to anyone under the table.
    Restricted,
    NoRightsRecord,
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DenyReason::UnknownCode => "unknown-code",
            DenyReason::Jurisdiction => "jurisdiction",
            DenyReason::AccessLevel => "access-level",
            DenyReason::Restricted => "restricted",
            DenyReason::NoRightsRecord => "no-rights-record",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Scope {
    Anywhere,
    Only(Jurisdiction),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rule {
    pub code: RightsCode,
    pub scope: Scope,
    pub allow: bool,
    pub min_access_level: Option<i32>,
}

/// Code × jurisdiction → decision. A jurisdiction-specific rule wins over
/// the `*` rule for the same code.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleTable {
    rules: Vec<Rule>,
}

#[derive(Deserialize)]
struct RuleRow {
    code: String,
    jurisdiction: String,
    decision: String,
    #[serde(default)]
    min_access_level: Option<i32>,
}

impl Default for RuleTable {
    fn default() -> Self {
        Self::from_csv(DEFAULT_RULES_CSV.as_bytes()).expect("built-in table parses")
    }
}

impl RuleTable {
    pub fn new(rules: Vec<Rule>) -> Result<Self, RightsError> {
        for (i, r) in rules.iter().enumerate() {
            if rules[..i]
                .iter()
                .any(|o| o.code == r.code && o.scope == r.scope)
            {
                return Err(RightsError::BadRuleTable(format!(
                    "duplicate rule for {} {:?}",
                    r.code, r.scope
                )));
            }
        }
        Ok(Self { rules })
    }

    /// Reads `code,jurisdiction,decision[,min_access_level]` with a header
    /// row. `jurisdiction` is an ISO country code or `*`; `decision` is
    /// `allow` or `deny`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, RightsError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let mut rules = Vec::new();
        for (line, row) in rdr.deserialize::<RuleRow>().enumerate() {
            let bad = |m: String| RightsError::BadRuleTable(format!("row {}: {m}", line + 1));
            let row = row.map_err(|e| bad(e.to_string()))?;
            let code = RightsCode::from_str(&row.code).map_err(|e| bad(e.to_string()))?;
            let scope = match row.jurisdiction.as_str() {
                "*" => Scope::Anywhere,
                j => Scope::Only(j.parse().map_err(|e: RightsError| bad(e.to_string()))?),
            };
            let allow = match row.decision.to_ascii_lowercase().as_str() {
                "allow" => true,
                "deny" => false,
                other => return Err(bad(format!("decision {other:?}"))),
            };
            rules.push(Rule {
                code,
                scope,
                allow,
                min_access_level: row.min_access_level,
            });
        }
        Self::new(rules)
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn knows(&self, code: &RightsCode) -> bool {
        self.rules.iter().any(|r| &r.code == code)
    }

    /// Pure decision for a user and a rights code.
    pub fn authorize(&self, user: &UserContext, code: &RightsCode) -> Decision {
        let mut specific = None;
        let mut general = None;
        let mut allowed_elsewhere = false;
        for r in self.rules.iter().filter(|r| &r.code == code) {
            match &r.scope {
                Scope::Only(j) if *j == user.jurisdiction => specific = Some(r),
                Scope::Only(_) => allowed_elsewhere |= r.allow,
                Scope::Anywhere => general = Some(r),
            }
        }
        let Some(rule) = specific.or(general) else {
            return if self.knows(code) {
                Decision::Deny(DenyReason::Jurisdiction)
            } else {
                Decision::Deny(DenyReason::UnknownCode)
            };
        };
        if !rule.allow {
            return Decision::Deny(if allowed_elsewhere {
                DenyReason::Jurisdiction
            } else {
                DenyReason::Restricted
            });
        }
        match rule.min_access_level {
            Some(min) if user.access_level < min => Decision::Deny(DenyReason::AccessLevel),
            _ => Decision::Allow,
        }
    }
}
