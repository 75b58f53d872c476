//! `converge` configuration file: TOML keys mirroring `ConvergenceConfig`.
//!
//! ```toml
//! bases = ["P1-", "P2-"]
//! patterns = ["diagonal", "m1", "m1sq", "dense"]
//! lx = 1.0
//! ly = 1.0
//! modes = [1, 2, 4]
//! vertex_ladder = [64, 128, 256, 512, 1024, 2048]
//! seeds = [1, 2, 3]
//! mesh_method = "delaunay-tiled"      # or "structured-jittered[:jitter]"
//! quadrature_order = 6
//! fit_window = [3.0, 15.0]
//! dense_solve = "factorization"       # or "cg"
//! cg_tolerance = 1e-12
//! threads = 0                         # 0: all cores
//! ```

use anyhow::{Context, Result};
use maxfeec::bench::{ConvergenceConfig, DenseSolve};
use serde::Deserialize;
use std::path::Path;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub bases: Option<Vec<String>>,
    pub patterns: Option<Vec<String>>,
    pub lx: Option<f64>,
    pub ly: Option<f64>,
    pub modes: Option<Vec<usize>>,
    pub vertex_ladder: Option<Vec<usize>>,
    pub seeds: Option<Vec<u64>>,
    pub mesh_method: Option<String>,
    pub quadrature_order: Option<usize>,
    pub fit_window: Option<(f64, f64)>,
    pub dense_solve: Option<String>,
    pub cg_tolerance: Option<f64>,
    pub threads: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Later layers win: `self` is applied on top of `cfg`.
    pub fn apply(&self, cfg: &mut ConvergenceConfig) -> Result<()> {
        if let Some(v) = &self.bases {
            cfg.bases = v.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
        }
        if let Some(v) = &self.patterns {
            cfg.patterns = v.iter().map(|s| s.parse()).collect::<Result<_, _>>()?;
        }
        if let Some(v) = self.lx {
            cfg.lx = v;
        }
        if let Some(v) = self.ly {
            cfg.ly = v;
        }
        if let Some(v) = &self.modes {
            cfg.modes = v.clone();
        }
        if let Some(v) = &self.vertex_ladder {
            cfg.vertex_ladder = v.clone();
        }
        if let Some(v) = &self.seeds {
            cfg.seeds = v.clone();
        }
        if let Some(v) = &self.mesh_method {
            cfg.mesh_method = v.parse()?;
        }
        if let Some(v) = self.quadrature_order {
            cfg.quadrature_order = v;
        }
        if let Some(v) = self.fit_window {
            cfg.fit_window = v;
        }
        let tol = self.cg_tolerance.or(match cfg.dense_solve {
            DenseSolve::ConjugateGradient { rel_tol } => Some(rel_tol),
            DenseSolve::Factorization => None,
        });
        match self.dense_solve.as_deref() {
            Some("factorization") => cfg.dense_solve = DenseSolve::Factorization,
            Some("cg") => cfg.dense_solve = DenseSolve::ConjugateGradient { rel_tol: tol.unwrap_or(1e-12) },
            Some(other) => anyhow::bail!("unknown dense_solve `{other}` (expected factorization or cg)"),
            None => {
                if let (DenseSolve::ConjugateGradient { .. }, Some(t)) = (cfg.dense_solve, self.cg_tolerance) {
                    cfg.dense_solve = DenseSolve::ConjugateGradient { rel_tol: t };
                }
            }
        }
        if let Some(v) = self.threads {
            cfg.threads = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use maxfeec::feec::Family;
    use maxfeec::spai::PatternKind;

    #[test]
    fn keys_override_defaults() {
        let f: ConfigFile = toml::from_str(
            "bases = [\"P2-\"]\npatterns = [\"m1sq\"]\nvertex_ladder = [16, 32]\nfit_window = [2.0, 9.0]\ndense_solve = \"cg\"\ncg_tolerance = 1e-10\n",
        )
        .unwrap();
        let mut cfg = ConvergenceConfig::default();
        f.apply(&mut cfg).unwrap();
        assert_eq!(cfg.bases, vec![Family::P2Minus]);
        assert_eq!(cfg.patterns, vec![PatternKind::M1sq]);
        assert_eq!(cfg.vertex_ladder, vec![16, 32]);
        assert_eq!(cfg.fit_window, (2.0, 9.0));
        assert_eq!(cfg.dense_solve, DenseSolve::ConjugateGradient { rel_tol: 1e-10 });
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(toml::from_str::<ConfigFile>("vertices = 3\n").is_err());
        let f: ConfigFile = toml::from_str("dense_solve = \"lu\"\n").unwrap();
        assert!(f.apply(&mut ConvergenceConfig::default()).is_err());
    }
}
