//! Run configuration shared by the command-line tool and config files.
//!
//! Every key is optional. Unset keys fall back to the library defaults;
//! values given on the command line override the file.

use serde::{Deserialize, Serialize};

use crate::boost::{BoostConfig, CarryingKind, TransformChoice};
use crate::data::DEFAULT_RESPONSE;
use crate::error::{Error, Result};

pub const DEFAULT_GRID_BINS: usize = 100;
pub const DEFAULT_QUANTILE_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub response: Option<String>,
    pub k: Option<usize>,
    pub df: Option<f64>,
    pub bins: Option<usize>,
    pub eta: Option<f64>,
    pub n_trees: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_node: Option<usize>,
    pub candidates: Option<usize>,
    pub patience: Option<usize>,
    pub validation_fraction: Option<f64>,
    pub seed: Option<u64>,
    pub carrying: Option<CarryingKind>,
    pub transform: Option<TransformChoice>,
    pub shift: Option<bool>,
    pub centering: Option<bool>,
    /// Bins of the output grid for density and CDF readouts.
    pub grid_bins: Option<usize>,
    pub quantile_levels: Option<Vec<f64>>,
    pub threads: Option<usize>,
}

/// Byte offset to 1-based (line, column).
fn line_col(text: &str, offset: usize) -> (u64, u64) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() as u64 + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) as u64 + 1;
    (line, col)
}

macro_rules! overlay_fields {
    ($base:ident, $top:ident; $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f.clone(); } )*
    };
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
            Error::Parse {
                line,
                column,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// `self` with every key set in `top` replaced.
    pub fn overlay(mut self, top: &RunConfig) -> Self {
        overlay_fields!(self, top; response, k, df, bins, eta, n_trees, max_depth, min_node,
            candidates, patience, validation_fraction, seed, carrying, transform, shift,
            centering, grid_bins, quantile_levels, threads);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.boost_config()?;
        if self.grid_bins == Some(0) {
            return Err(Error::InvalidArgument("grid_bins must be at least 1".into()));
        }
        if let Some(levels) = &self.quantile_levels {
            if levels.is_empty() || levels.iter().any(|&u| !(u > 0.0 && u < 1.0)) {
                return Err(Error::InvalidArgument(
                    "quantile_levels must be non-empty and inside (0, 1)".into(),
                ));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidArgument("threads must be at least 1".into()));
        }
        if self.response.as_deref() == Some("") {
            return Err(Error::InvalidArgument("response column name is empty".into()));
        }
        Ok(())
    }

    pub fn response(&self) -> &str {
        self.response.as_deref().unwrap_or(DEFAULT_RESPONSE)
    }

    pub fn grid_bins(&self) -> usize {
        self.grid_bins.unwrap_or(DEFAULT_GRID_BINS)
    }

    pub fn quantile_levels(&self) -> Vec<f64> {
        self.quantile_levels
            .clone()
            .unwrap_or_else(|| DEFAULT_QUANTILE_LEVELS.to_vec())
    }

    /// Library defaults with the configured keys applied, validated.
    pub fn boost_config(&self) -> Result<BoostConfig> {
        let mut c = BoostConfig::default();
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(
            k,
            df,
            bins,
            eta,
            n_trees,
            max_depth,
            min_node,
            candidates,
            patience,
            validation_fraction,
            seed,
            carrying
        );
        if let Some(t) = self.transform {
            c.pretreat.transform = t;
        }
        if let Some(s) = self.shift {
            c.pretreat.shift = s;
        }
        if let Some(on) = self.centering {
            c.pretreat.centering = on;
        }
        c.pretreat.centering_config.seed = c.seed;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.boost_config().unwrap(), BoostConfig::default());
        assert_eq!(cfg.response(), "y");
    }

    #[test]
    fn keys_map_onto_boost_config() {
        let cfg = RunConfig::from_toml(
            "k = 8\ndf = 4.5\nbins = 30\ncarrying = \"uniform\"\ncentering = true\ntransform = \"log\"\nseed = 9\n",
        )
        .unwrap();
        let b = cfg.boost_config().unwrap();
        assert_eq!((b.k, b.df, b.bins, b.seed), (8, 4.5, 30, 9));
        assert_eq!(b.carrying, CarryingKind::Uniform);
        assert!(b.pretreat.centering);
        assert_eq!(b.pretreat.transform, TransformChoice::Log);
        assert_eq!(b.pretreat.centering_config.seed, 9);
    }

    #[test]
    fn flags_override_file() {
        let file = RunConfig::from_toml("k = 8\neta = 0.05\n").unwrap();
        let flags = RunConfig {
            k: Some(6),
            ..Default::default()
        };
        let merged = file.overlay(&flags);
        assert_eq!(merged.k, Some(6));
        assert_eq!(merged.eta, Some(0.05));
    }

    #[test]
    fn errors_carry_positions() {
        match RunConfig::from_toml("k = 8\nbogus = 1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match RunConfig::from_toml("k = \"ten\"") {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (1, 5)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn out_of_range_values_are_rejected() {
        for text in [
            "df = 12.0",
            "eta = 0.0",
            "quantile_levels = [0.5, 1.0]",
            "threads = 0",
            "k = 1",
        ] {
            assert!(
                matches!(RunConfig::from_toml(text), Err(Error::InvalidArgument(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn line_col_counts_from_one() {
        assert_eq!(line_col("ab\ncd", 0), (1, 1));
        assert_eq!(line_col("ab\ncd", 4), (2, 2));
    }
}
