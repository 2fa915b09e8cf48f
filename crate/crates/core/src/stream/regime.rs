//! Declarative training regimes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reader::BranchMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeKind {
    /// Pretrained model, never updated.
    PreOnly,
    /// Complete labels applied once per simulated day.
    OfflineDaily,
    /// Partial labels at every purchase.
    OnlineVanilla,
    /// Partial labels with optional calibration, alignment and unlearning.
    OnlineReader,
    /// The final label at the first purchase.
    OracleFirstPurchase,
}

impl RegimeKind {
    pub const ALL: [RegimeKind; 5] = [
        RegimeKind::PreOnly,
        RegimeKind::OfflineDaily,
        RegimeKind::OnlineVanilla,
        RegimeKind::OnlineReader,
        RegimeKind::OracleFirstPurchase,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegimeKind::PreOnly => "pre_only",
            RegimeKind::OfflineDaily => "offline_daily",
            RegimeKind::OnlineVanilla => "online_vanilla",
            RegimeKind::OnlineReader => "online_reader",
            RegimeKind::OracleFirstPurchase => "oracle_first_purchase",
        }
    }

    pub fn parse(s: &str) -> Option<RegimeKind> {
        RegimeKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingMode {
    Hybrid,
    Hard,
    /// Route by the true purchase count, at inference too.
    Oracle,
}

impl RoutingMode {
    pub const ALL: [RoutingMode; 3] = [RoutingMode::Hybrid, RoutingMode::Hard, RoutingMode::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            RoutingMode::Hybrid => "hybrid",
            RoutingMode::Hard => "hard",
            RoutingMode::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Option<RoutingMode> {
        RoutingMode::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DebiasFlags {
    pub calibrator: bool,
    pub gra: bool,
    pub plu: bool,
}

impl DebiasFlags {
    pub const NONE: DebiasFlags = DebiasFlags {
        calibrator: false,
        gra: false,
        plu: false,
    };
    pub const FULL: DebiasFlags = DebiasFlags {
        calibrator: true,
        gra: true,
        plu: true,
    };

    pub fn any(self) -> bool {
        self.calibrator || self.gra || self.plu
    }

    /// Compact label: `none`, or the set flags joined by `+` (`c+g+p`).
    pub fn label(self) -> String {
        let parts: Vec<&str> = [(self.calibrator, "c"), (self.gra, "g"), (self.plu, "p")]
            .into_iter()
            .filter_map(|(on, s)| on.then_some(s))
            .collect();
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }

    pub fn parse(s: &str) -> Option<DebiasFlags> {
        let mut f = DebiasFlags::NONE;
        if s == "none" {
            return Some(f);
        }
        for part in s.split('+') {
            match part {
                "c" if !f.calibrator => f.calibrator = true,
                "g" if !f.gra => f.gra = true,
                "p" if !f.plu => f.plu = true,
                _ => return None,
            }
        }
        Some(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainingRegime {
    pub kind: RegimeKind,
    pub branch_mode: BranchMode,
    pub routing: RoutingMode,
    pub debias: DebiasFlags,
}

impl TrainingRegime {
    pub fn new(kind: RegimeKind, branch_mode: BranchMode, routing: RoutingMode, debias: DebiasFlags) -> Result<Self> {
        let r = TrainingRegime {
            kind,
            branch_mode,
            routing,
            debias,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.debias.any() && self.kind != RegimeKind::OnlineReader {
            return bad(format!("debias flags only apply to online_reader, not {}", self.kind.name()));
        }
        if self.debias.calibrator && !self.branch_mode.is_dual() {
            return bad("the calibrator needs a dual-branch model".into());
        }
        if self.debias.plu && !self.debias.gra {
            return bad("plu runs on the window-close path and needs gra".into());
        }
        if !self.branch_mode.is_dual() && self.routing != RoutingMode::Hybrid {
            return bad("single-branch models take the default routing".into());
        }
        Ok(())
    }

    /// Readable cell name, e.g. `online_reader/dual_shared/hybrid/c+g+p`.
    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}/{}",
            self.kind.name(),
            self.branch_mode.name(),
            self.routing.name(),
            self.debias.label()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        let ok = TrainingRegime::new(RegimeKind::OnlineReader, BranchMode::DualShared, RoutingMode::Hybrid, DebiasFlags::FULL);
        assert!(ok.is_ok());
        let no_gra = DebiasFlags { calibrator: true, gra: false, plu: true };
        assert!(TrainingRegime::new(RegimeKind::OnlineReader, BranchMode::DualShared, RoutingMode::Hybrid, no_gra).is_err());
        assert!(TrainingRegime::new(RegimeKind::OnlineVanilla, BranchMode::DualShared, RoutingMode::Hybrid, DebiasFlags::FULL).is_err());
        let cal = DebiasFlags { calibrator: true, ..DebiasFlags::NONE };
        assert!(TrainingRegime::new(RegimeKind::OnlineReader, BranchMode::Single, RoutingMode::Hybrid, cal).is_err());
        assert!(TrainingRegime::new(RegimeKind::OnlineVanilla, BranchMode::Single, RoutingMode::Hard, DebiasFlags::NONE).is_err());
    }

    #[test]
    fn names_round_trip() {
        for k in RegimeKind::ALL {
            assert_eq!(RegimeKind::parse(k.name()), Some(k));
        }
        for m in RoutingMode::ALL {
            assert_eq!(RoutingMode::parse(m.name()), Some(m));
        }
        for bits in 0..8u8 {
            let f = DebiasFlags { calibrator: bits & 1 != 0, gra: bits & 2 != 0, plu: bits & 4 != 0 };
            assert_eq!(DebiasFlags::parse(&f.label()), Some(f));
        }
        assert_eq!(DebiasFlags::parse("c+c"), None);
        assert_eq!(DebiasFlags::parse("x"), None);
    }
}
