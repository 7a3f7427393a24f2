//! Switches that remove one decoder component at a time.

use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablation {
    /// Sample each level by nearest lookup at `p̂` instead of partition and
    /// aggregate.
    pub no_pa: bool,
    pub no_cell_embed: bool,
    /// Uniform subcell weights instead of similarity voting.
    pub no_voting: bool,
    pub no_spatial_enc: bool,
    /// Generator reads raw maps instead of 3×3 unfolded ones.
    pub no_unfold: bool,
    /// Let gradients flow through the aggregated coordinate.
    pub no_stop_grad: bool,
}

impl Ablation {
    pub const FLAGS: [&'static str; 6] = [
        "no_pa",
        "no_cell_embed",
        "no_voting",
        "no_spatial_enc",
        "no_unfold",
        "no_stop_grad",
    ];

    pub fn set(&mut self, flag: &str, on: bool) -> Result<()> {
        let slot = match flag {
            "no_pa" => &mut self.no_pa,
            "no_cell_embed" => &mut self.no_cell_embed,
            "no_voting" => &mut self.no_voting,
            "no_spatial_enc" => &mut self.no_spatial_enc,
            "no_unfold" => &mut self.no_unfold,
            "no_stop_grad" => &mut self.no_stop_grad,
            other => return Err(Error::Config(format!("unknown ablation flag `{other}`"))),
        };
        *slot = on;
        Ok(())
    }

    pub fn get(&self, flag: &str) -> Option<bool> {
        Some(match flag {
            "no_pa" => self.no_pa,
            "no_cell_embed" => self.no_cell_embed,
            "no_voting" => self.no_voting,
            "no_spatial_enc" => self.no_spatial_enc,
            "no_unfold" => self.no_unfold,
            "no_stop_grad" => self.no_stop_grad,
            _ => return None,
        })
    }

    /// The plain continuous pyramid: nearest lookup at the shifted
    /// coordinate, no cell embedding and no voting.
    pub fn plain_pyramid() -> Self {
        Ablation {
            no_pa: true,
            no_cell_embed: true,
            no_voting: true,
            ..Ablation::default()
        }
    }
}

/// Rows of the ablation table, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    NoPa,
    NoCellEmbed,
    NoVoting,
    NoSpatialEnc,
    NoUnfold,
    Full,
    NoStopGrad,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::NoPa,
        Variant::NoCellEmbed,
        Variant::NoVoting,
        Variant::NoSpatialEnc,
        Variant::NoUnfold,
        Variant::Full,
        Variant::NoStopGrad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::NoPa => "no_pa",
            Variant::NoCellEmbed => "no_cell_embed",
            Variant::NoVoting => "no_voting",
            Variant::NoSpatialEnc => "no_spatial_enc",
            Variant::NoUnfold => "no_unfold",
            Variant::Full => "full",
            Variant::NoStopGrad => "no_stop_grad",
        }
    }

    /// Applies this row's switch on top of `base`.
    pub fn apply(self, base: Ablation) -> Ablation {
        let mut a = base;
        match self {
            Variant::NoPa => a.no_pa = true,
            Variant::NoCellEmbed => a.no_cell_embed = true,
            Variant::NoVoting => a.no_voting = true,
            Variant::NoSpatialEnc => a.no_spatial_enc = true,
            Variant::NoUnfold => a.no_unfold = true,
            Variant::Full => {}
            Variant::NoStopGrad => a.no_stop_grad = true,
        }
        a
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}
