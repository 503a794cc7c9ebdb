//! Named decoding recipes shared by the experiment harness and distillation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decoders::{beam_decode, greedy_decode, nucleus_decode, BeamConfig, DecodeConfig, NucleusConfig};
use crate::domain::{Document, Hypothesis};
use crate::error::{Error, Result};
use crate::guided::{lookahead_decode, rank_candidates, Base, LookaheadConfig};
use crate::metrics::Scorer;
use crate::models::ConditionalModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Recipe {
    Greedy,
    Beam { width: usize },
    Nucleus { top_p: f64 },
    BeamRanking { width: usize },
    GreedyLookahead,
    BeamLookahead { width: usize },
    BeamLookaheadRanking { width: usize },
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Recipe::Greedy => write!(f, "greedy"),
            Recipe::Beam { width } => write!(f, "beam:{width}"),
            Recipe::Nucleus { top_p } => write!(f, "nucleus:{top_p}"),
            Recipe::BeamRanking { width } => write!(f, "beam-ranking:{width}"),
            Recipe::GreedyLookahead => write!(f, "greedy-lookahead"),
            Recipe::BeamLookahead { width } => write!(f, "beam-lookahead:{width}"),
            Recipe::BeamLookaheadRanking { width } => write!(f, "beam-lookahead-ranking:{width}"),
        }
    }
}

impl FromStr for Recipe {
    type Err = Error;

    /// Parses the `Display` form, e.g. `beam:10`, `nucleus:0.9`,
    /// `beam-lookahead-ranking:10`.
    fn from_str(s: &str) -> Result<Self> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let width = || -> Result<usize> {
            let w: usize = arg
                .ok_or_else(|| Error::config(format!("recipe {s:?} needs a beam width")))?
                .parse()
                .map_err(|_| Error::config(format!("bad beam width in recipe {s:?}")))?;
            if w == 0 {
                return Err(Error::config("beam width must be positive"));
            }
            Ok(w)
        };
        let recipe = match head {
            "greedy" if arg.is_none() => Recipe::Greedy,
            "greedy-lookahead" if arg.is_none() => Recipe::GreedyLookahead,
            "beam" => Recipe::Beam { width: width()? },
            "beam-ranking" => Recipe::BeamRanking { width: width()? },
            "beam-lookahead" => Recipe::BeamLookahead { width: width()? },
            "beam-lookahead-ranking" => Recipe::BeamLookaheadRanking { width: width()? },
            "nucleus" => {
                let p: f64 = arg
                    .ok_or_else(|| Error::config("nucleus recipe needs top_p"))?
                    .parse()
                    .map_err(|_| Error::config(format!("bad top_p in recipe {s:?}")))?;
                NucleusConfig::new(p)?;
                Recipe::Nucleus { top_p: p }
            }
            _ => return Err(Error::config(format!("unknown recipe {s:?}"))),
        };
        Ok(recipe)
    }
}

impl Recipe {
    pub fn uses_lookahead(&self) -> bool {
        matches!(
            self,
            Recipe::GreedyLookahead | Recipe::BeamLookahead { .. } | Recipe::BeamLookaheadRanking { .. }
        )
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(self, Recipe::Nucleus { .. })
    }
}

/// Everything a recipe needs beyond the model and the document.
pub struct RecipeContext<'a> {
    pub decode: DecodeConfig,
    /// Lookahead parameters; `base` is overridden by the recipe.
    pub lookahead: LookaheadConfig,
    pub lookahead_scorer: &'a dyn Scorer,
    pub rank_scorer: &'a dyn Scorer,
}

/// Per-document seed so sampled outputs do not depend on processing order.
pub fn document_seed(seed: u64, doc_id: &str) -> u64 {
    let mut h = seed ^ 0xcbf2_9ce4_8422_2325;
    for b in doc_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Decodes one document with `recipe` and returns the selected summary.
pub fn run_recipe<M: ConditionalModel + ?Sized>(
    model: &M,
    x: &Document,
    recipe: &Recipe,
    ctx: &RecipeContext<'_>,
) -> Result<Hypothesis> {
    let lookahead = |base: Base| LookaheadConfig {
        base,
        ..ctx.lookahead.clone()
    };
    Ok(match *recipe {
        Recipe::Greedy => greedy_decode(model, x, &ctx.decode)?,
        Recipe::Beam { width } => first(beam_decode(model, x, &BeamConfig::new(width)?, &ctx.decode)?)?,
        Recipe::Nucleus { top_p } => {
            let dcfg = DecodeConfig {
                seed: document_seed(ctx.decode.seed, &x.id),
                ..ctx.decode
            };
            nucleus_decode(model, x, &NucleusConfig::new(top_p)?, &dcfg)?
        }
        Recipe::BeamRanking { width } => {
            let cands = beam_decode(model, x, &BeamConfig::new(width)?, &ctx.decode)?;
            rank_candidates(&cands, ctx.rank_scorer, x)?.swap_remove(0).hypothesis
        }
        Recipe::GreedyLookahead => {
            let out = lookahead_decode(model, x, &lookahead(Base::Greedy), ctx.lookahead_scorer, &ctx.decode)?;
            first(out.candidates)?
        }
        Recipe::BeamLookahead { width } => {
            let out = lookahead_decode(
                model,
                x,
                &lookahead(Base::Beam { width }),
                ctx.lookahead_scorer,
                &ctx.decode,
            )?;
            first(out.candidates)?
        }
        Recipe::BeamLookaheadRanking { width } => {
            let out = lookahead_decode(
                model,
                x,
                &lookahead(Base::Beam { width }),
                ctx.lookahead_scorer,
                &ctx.decode,
            )?;
            rank_candidates(&out.candidates, ctx.rank_scorer, x)?
                .swap_remove(0)
                .hypothesis
        }
    })
}

fn first(mut v: Vec<Hypothesis>) -> Result<Hypothesis> {
    if v.is_empty() {
        return Err(Error::usage("decoder returned no candidates"));
    }
    Ok(v.swap_remove(0))
}
