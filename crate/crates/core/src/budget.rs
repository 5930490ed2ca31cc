//! Closed-form budget models: trainable-parameter counts and per-layer
//! activation memory, evaluated in exact integer arithmetic.
//!
//! **Parameter model.** Per adapted module, in scalars:
//!
//! ```text
//! moft     r(r−1)/2 + 2r          lora     r(d + n)
//! lora-xs  r²                     dora     r(d + n) + n
//! vera     r + n                  oft      r·(d/r)² + n      (r | d)
//! boft     m·(d/b)·b² + n  (b|d)  svft     d_min·k + (d_min−k)(k+1)
//! ```
//!
//! with `d_min = min(d, n)`. Totals multiply by the module count; every
//! step is checked and reports `Overflow` rather than wrapping.
//!
//! **Activation-memory model.** For one transformer layer with batch `b`,
//! sequence `s`, hidden size `h`, `a` attention heads, and 4-byte
//! activations, the full fine-tuning baseline costs `66bsh + 9abs²` bytes,
//! split as attention `24bsh + 4abs²`, softmax `4abs²`, dropout masks
//! `abs² + 2bsh`, and feed-forward `40bsh`. Each method shifts that by an
//! adapter delta:
//!
//! ```text
//! lora  +24bsr            dora  +36bsh + 24bsr     vera  +8bsh + 16bsr
//! oft   +36bsh            boft  +36·m·bsh          goft  +108bsh − 48bs
//! svft  −4bsh             lora-xs −28bsh + 24bsr   moft  −28bsh + 72bsr
//! ```
//!
//! Negative deltas are real savings: the rotation adapter re-uses the
//! frozen subspace projection where additive methods store extra
//! intermediates, at the price of `72bsr` for its own factored chain.
//! Half-precision activations scale every component by `bytes/4` with
//! floor division; the breakdown always sums exactly to the total.

use serde::{Deserialize, Serialize};

use crate::error::{MoftError, Result};

// ---------------------------------------------------------------------------
// Parameter counts
// ---------------------------------------------------------------------------

/// Methods covered by the parameter model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamMethod {
    Moft,
    Lora,
    LoraXs,
    Dora,
    Vera,
    Oft,
    Boft,
    Svft,
}

impl std::str::FromStr for ParamMethod {
    type Err = MoftError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "moft" => ParamMethod::Moft,
            "lora" => ParamMethod::Lora,
            "lora-xs" => ParamMethod::LoraXs,
            "dora" => ParamMethod::Dora,
            "vera" => ParamMethod::Vera,
            "oft" => ParamMethod::Oft,
            "boft" => ParamMethod::Boft,
            "svft" => ParamMethod::Svft,
            other => {
                return Err(MoftError::InvalidInput(format!(
                    "unknown method '{other}', expected moft|lora|lora-xs|dora|vera|oft|boft|svft"
                )))
            }
        })
    }
}

impl std::fmt::Display for ParamMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ParamMethod::Moft => "moft",
            ParamMethod::Lora => "lora",
            ParamMethod::LoraXs => "lora-xs",
            ParamMethod::Dora => "dora",
            ParamMethod::Vera => "vera",
            ParamMethod::Oft => "oft",
            ParamMethod::Boft => "boft",
            ParamMethod::Svft => "svft",
        };
        write!(f, "{s}")
    }
}

/// Dimension bag for [`count_params`]; each method reads only what its
/// formula needs.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ParamDims {
    /// Input dimension of the adapted weight.
    pub d: Option<u64>,
    /// Output dimension of the adapted weight.
    pub n: Option<u64>,
    /// Adapter rank (MOFT, LoRA, LoRA-XS, DoRA, VeRA) or block count (OFT).
    pub r: Option<u64>,
    /// Butterfly factor count (BOFT).
    pub m: Option<u64>,
    /// Block size (BOFT).
    pub b_block: Option<u64>,
    /// Kept singular directions (SVFT).
    pub k: Option<u64>,
    /// Smaller weight dimension (SVFT); derived as `min(d, n)` when absent.
    pub d_min: Option<u64>,
}

fn need(v: Option<u64>, method: ParamMethod, name: &str) -> Result<u128> {
    match v {
        Some(x) if x >= 1 => Ok(x as u128),
        Some(x) => Err(MoftError::InvalidInput(format!(
            "{method} requires {name} >= 1, got {x}"
        ))),
        None => Err(MoftError::InvalidInput(format!(
            "{method} requires dimension {name}"
        ))),
    }
}

fn cmul(a: u128, b: u128) -> Result<u128> {
    a.checked_mul(b)
        .ok_or_else(|| MoftError::Overflow("parameter count exceeds integer range".to_string()))
}

fn cadd(a: u128, b: u128) -> Result<u128> {
    a.checked_add(b)
        .ok_or_else(|| MoftError::Overflow("parameter count exceeds integer range".to_string()))
}

/// Total trainable parameters for `modules` adapted modules.
///
/// # Errors
///
/// `InvalidInput` for missing or non-positive dimensions and failed
/// divisibility constraints, `InvalidRank` when a rank-like parameter is
/// out of range, `Overflow` if the exact count does not fit in `u64`.
pub fn count_params(method: ParamMethod, dims: &ParamDims, modules: u64) -> Result<u64> {
    if modules == 0 {
        return Err(MoftError::InvalidInput(
            "module count must be at least 1".to_string(),
        ));
    }
    let per_module: u128 = match method {
        ParamMethod::Moft => {
            let r = need(dims.r, method, "r")?;
            cadd(cmul(r, r - 1)? / 2, cmul(2, r)?)?
        }
        ParamMethod::Lora => {
            let d = need(dims.d, method, "d")?;
            let n = need(dims.n, method, "n")?;
            let r = need(dims.r, method, "r")?;
            cmul(r, cadd(d, n)?)?
        }
        ParamMethod::LoraXs => {
            let r = need(dims.r, method, "r")?;
            cmul(r, r)?
        }
        ParamMethod::Dora => {
            let d = need(dims.d, method, "d")?;
            let n = need(dims.n, method, "n")?;
            let r = need(dims.r, method, "r")?;
            cadd(cmul(r, cadd(d, n)?)?, n)?
        }
        ParamMethod::Vera => {
            let n = need(dims.n, method, "n")?;
            let r = need(dims.r, method, "r")?;
            cadd(r, n)?
        }
        ParamMethod::Oft => {
            let d = need(dims.d, method, "d")?;
            let n = need(dims.n, method, "n")?;
            let r = need(dims.r, method, "r")?;
            if d % r != 0 {
                return Err(MoftError::InvalidInput(format!(
                    "oft requires the block count to divide d, got d={d}, r={r}"
                )));
            }
            let block = d / r;
            cadd(cmul(r, cmul(block, block)?)?, n)?
        }
        ParamMethod::Boft => {
            let d = need(dims.d, method, "d")?;
            let n = need(dims.n, method, "n")?;
            let m = need(dims.m, method, "m")?;
            let b = need(dims.b_block, method, "b_block")?;
            if d % b != 0 {
                return Err(MoftError::InvalidInput(format!(
                    "boft requires the block size to divide d, got d={d}, b={b}"
                )));
            }
            cadd(cmul(m, cmul(d / b, cmul(b, b)?)?)?, n)?
        }
        ParamMethod::Svft => {
            let k = need(dims.k, method, "k")?;
            let d_min = match dims.d_min {
                Some(_) => need(dims.d_min, method, "d_min")?,
                None => {
                    let d = need(dims.d, method, "d")?;
                    let n = need(dims.n, method, "n")?;
                    d.min(n)
                }
            };
            if k > d_min {
                return Err(MoftError::InvalidRank(format!(
                    "svft requires k <= min(d, n) = {d_min}, got k={k}"
                )));
            }
            cadd(cmul(d_min, k)?, cmul(d_min - k, k + 1)?)?
        }
    };
    let total = cmul(per_module, modules as u128)?;
    u64::try_from(total)
        .map_err(|_| MoftError::Overflow("parameter count exceeds integer range".to_string()))
}

// ---------------------------------------------------------------------------
// Activation memory
// ---------------------------------------------------------------------------

/// Methods covered by the activation-memory model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemMethod {
    Fft,
    Lora,
    Dora,
    Vera,
    Oft,
    Boft,
    Goft,
    Svft,
    LoraXs,
    Moft,
}

impl MemMethod {
    /// Every supported method, in canonical report order.
    pub const ALL: [MemMethod; 10] = [
        MemMethod::Fft,
        MemMethod::Lora,
        MemMethod::Dora,
        MemMethod::Vera,
        MemMethod::Oft,
        MemMethod::Boft,
        MemMethod::Goft,
        MemMethod::Svft,
        MemMethod::LoraXs,
        MemMethod::Moft,
    ];
}

impl std::str::FromStr for MemMethod {
    type Err = MoftError;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fft" => MemMethod::Fft,
            "lora" => MemMethod::Lora,
            "dora" => MemMethod::Dora,
            "vera" => MemMethod::Vera,
            "oft" => MemMethod::Oft,
            "boft" => MemMethod::Boft,
            "goft" => MemMethod::Goft,
            "svft" => MemMethod::Svft,
            "lora-xs" => MemMethod::LoraXs,
            "moft" => MemMethod::Moft,
            other => {
                return Err(MoftError::InvalidInput(format!(
                    "unknown method '{other}', expected \
                     fft|lora|dora|vera|oft|boft|goft|svft|lora-xs|moft"
                )))
            }
        })
    }
}

impl std::fmt::Display for MemMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            MemMethod::Fft => "fft",
            MemMethod::Lora => "lora",
            MemMethod::Dora => "dora",
            MemMethod::Vera => "vera",
            MemMethod::Oft => "oft",
            MemMethod::Boft => "boft",
            MemMethod::Goft => "goft",
            MemMethod::Svft => "svft",
            MemMethod::LoraXs => "lora-xs",
            MemMethod::Moft => "moft",
        };
        write!(f, "{s}")
    }
}

fn default_bytes_per_act() -> u32 {
    4
}

/// One transformer layer's shape for the memory model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerConfig {
    /// Batch size.
    pub b: u64,
    /// Sequence length.
    pub s: u64,
    /// Hidden size.
    pub h: u64,
    /// Attention heads.
    pub a: u64,
    /// Adapter rank; required by lora, dora, vera, lora-xs, moft.
    #[serde(default)]
    pub r: Option<u64>,
    /// Butterfly factor count; required by boft.
    #[serde(default)]
    pub m: Option<u64>,
    /// Bytes per stored activation: 4 (single) or 2 (half).
    #[serde(default = "default_bytes_per_act")]
    pub bytes_per_act: u32,
}

/// Per-site byte counts; always sums exactly to the estimate's total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakdown {
    /// Attention projections and output, `24bsh + 4abs²` at 4 bytes.
    pub attention: i64,
    /// Softmax probabilities, `4abs²`.
    pub softmax: i64,
    /// Dropout masks, `abs² + 2bsh`.
    pub dropout_masks: i64,
    /// Feed-forward block, `40bsh`.
    pub ffn: i64,
    /// Method-specific shift relative to full fine-tuning; may be negative.
    pub adapter_delta: i64,
}

/// Activation-memory estimate for one layer and one method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEstimate {
    pub method: MemMethod,
    /// Total bytes; equals the sum of the breakdown components.
    pub total_bytes: i64,
    pub breakdown: Breakdown,
}

fn mem_mul(a: i128, b: i128) -> Result<i128> {
    a.checked_mul(b)
        .ok_or_else(|| MoftError::Overflow("memory estimate exceeds integer range".to_string()))
}

fn mem_add(a: i128, b: i128) -> Result<i128> {
    a.checked_add(b)
        .ok_or_else(|| MoftError::Overflow("memory estimate exceeds integer range".to_string()))
}

fn to_i64(v: i128) -> Result<i64> {
    i64::try_from(v)
        .map_err(|_| MoftError::Overflow("memory estimate exceeds integer range".to_string()))
}

fn validate_cfg(cfg: &LayerConfig, method: MemMethod) -> Result<()> {
    for (name, v) in [("b", cfg.b), ("s", cfg.s), ("h", cfg.h), ("a", cfg.a)] {
        if v == 0 {
            return Err(MoftError::InvalidInput(format!(
                "layer dimension {name} must be at least 1"
            )));
        }
    }
    if cfg.bytes_per_act != 2 && cfg.bytes_per_act != 4 {
        return Err(MoftError::InvalidInput(format!(
            "bytes_per_act must be 2 or 4, got {}",
            cfg.bytes_per_act
        )));
    }
    let needs_r = matches!(
        method,
        MemMethod::Lora | MemMethod::Dora | MemMethod::Vera | MemMethod::LoraXs | MemMethod::Moft
    );
    match (needs_r, cfg.r) {
        (true, None) => {
            return Err(MoftError::InvalidInput(format!(
                "{method} requires a rank r"
            )))
        }
        (true, Some(0)) => {
            return Err(MoftError::InvalidInput(format!(
                "{method} requires r >= 1"
            )))
        }
        _ => {}
    }
    if method == MemMethod::Boft {
        match cfg.m {
            None => {
                return Err(MoftError::InvalidInput(
                    "boft requires a factor count m".to_string(),
                ))
            }
            Some(0) => {
                return Err(MoftError::InvalidInput("boft requires m >= 1".to_string()))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Activation memory for one layer under `method`.
///
/// # Errors
///
/// `InvalidInput` for missing or non-positive configuration fields or an
/// unsupported `bytes_per_act`; `Overflow` if any component leaves `i64`.
pub fn act_method(cfg: &LayerConfig, method: MemMethod) -> Result<MemoryEstimate> {
    validate_cfg(cfg, method)?;
    let b = cfg.b as i128;
    let s = cfg.s as i128;
    let h = cfg.h as i128;
    let a = cfg.a as i128;
    let bs = mem_mul(b, s)?;
    let bsh = mem_mul(bs, h)?;
    let absq = mem_mul(a, mem_mul(bs, s)?)?;

    let attention = mem_add(mem_mul(24, bsh)?, mem_mul(4, absq)?)?;
    let softmax = mem_mul(4, absq)?;
    let dropout = mem_add(absq, mem_mul(2, bsh)?)?;
    let ffn = mem_mul(40, bsh)?;
    let delta = match method {
        MemMethod::Fft => 0,
        MemMethod::Lora => mem_mul(24, mem_mul(bs, cfg.r.unwrap() as i128)?)?,
        MemMethod::Dora => mem_add(
            mem_mul(36, bsh)?,
            mem_mul(24, mem_mul(bs, cfg.r.unwrap() as i128)?)?,
        )?,
        MemMethod::Vera => mem_add(
            mem_mul(8, bsh)?,
            mem_mul(16, mem_mul(bs, cfg.r.unwrap() as i128)?)?,
        )?,
        MemMethod::Oft => mem_mul(36, bsh)?,
        MemMethod::Boft => mem_mul(36, mem_mul(cfg.m.unwrap() as i128, bsh)?)?,
        MemMethod::Goft => mem_add(mem_mul(108, bsh)?, mem_mul(-48, bs)?)?,
        MemMethod::Svft => mem_mul(-4, bsh)?,
        MemMethod::LoraXs => mem_add(
            mem_mul(-28, bsh)?,
            mem_mul(24, mem_mul(bs, cfg.r.unwrap() as i128)?)?,
        )?,
        MemMethod::Moft => mem_add(
            mem_mul(-28, bsh)?,
            mem_mul(72, mem_mul(bs, cfg.r.unwrap() as i128)?)?,
        )?,
    };

    // Scale each component to the requested precision independently, then
    // define the total as the component sum so the invariant holds exactly.
    let bpa = cfg.bytes_per_act as i128;
    let scale = |v: i128| -> Result<i64> { to_i64(mem_mul(v, bpa)?.div_euclid(4)) };
    let breakdown = Breakdown {
        attention: scale(attention)?,
        softmax: scale(softmax)?,
        dropout_masks: scale(dropout)?,
        ffn: scale(ffn)?,
        adapter_delta: scale(delta)?,
    };
    let total = to_i64(
        [
            breakdown.attention,
            breakdown.softmax,
            breakdown.dropout_masks,
            breakdown.ffn,
            breakdown.adapter_delta,
        ]
        .iter()
        .map(|&v| v as i128)
        .try_fold(0i128, |acc, v| mem_add(acc, v))?,
    )?;
    Ok(MemoryEstimate {
        method,
        total_bytes: total,
        breakdown,
    })
}

/// Activation bytes for one layer under full fine-tuning, the reference
/// every adapter delta is measured against.
///
/// Identical to `act_method(cfg, MemMethod::Fft)?.total_bytes`; any rank or
/// factor fields in `cfg` are ignored.
///
/// # Errors
///
/// `InvalidInput` for missing or non-positive configuration fields or an
/// unsupported `bytes_per_act`; `Overflow` beyond the signed 64-bit range.
pub fn act_base(cfg: &LayerConfig) -> Result<i64> {
    Ok(act_method(cfg, MemMethod::Fft)?.total_bytes)
}

/// One line of a method-by-configuration comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompareRow {
    pub config: LayerConfig,
    pub method: MemMethod,
    pub total_bytes: i64,
    /// `total_bytes` relative to full fine-tuning on the same configuration.
    pub ratio_vs_fft: f64,
}

/// Evaluates every method on every configuration, in input order.
///
/// # Errors
///
/// `InvalidInput` if either list is empty or any entry is invalid.
pub fn compare(cfgs: &[LayerConfig], methods: &[MemMethod]) -> Result<Vec<CompareRow>> {
    if cfgs.is_empty() || methods.is_empty() {
        return Err(MoftError::InvalidInput(
            "comparison needs at least one configuration and one method".to_string(),
        ));
    }
    let mut rows = Vec::with_capacity(cfgs.len() * methods.len());
    for cfg in cfgs {
        let fft = act_method(cfg, MemMethod::Fft)?.total_bytes;
        for &method in methods {
            let est = act_method(cfg, method)?;
            rows.push(CompareRow {
                config: *cfg,
                method,
                total_bytes: est.total_bytes,
                ratio_vs_fft: est.total_bytes as f64 / fft as f64,
            });
        }
    }
    Ok(rows)
}
