use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decompose::InterpretableMask;
use crate::error::{Error, Result};

/// Default width of the exponential kernel, in units of normalized
/// Hamming distance.
pub const DEFAULT_KERNEL_WIDTH: f64 = 0.25;

/// Perturbed masks around the instance. The first mask is always all-ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub masks: Vec<InterpretableMask>,
    pub responses: Vec<f64>,
    pub proximity: Vec<f64>,
    pub exhaustive: bool,
}

impl Neighborhood {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn d_prime(&self) -> usize {
        self.masks.first().map_or(0, InterpretableMask::len)
    }
}

/// All `2^d′` masks when that fits in `n_max`, otherwise all-ones plus
/// `n_max − 1` distinct random masks. Returns the masks and whether the
/// enumeration is exhaustive.
pub fn enumerate_neighborhood(
    d_prime: usize,
    n_max: usize,
    seed: u64,
) -> Result<(Vec<InterpretableMask>, bool)> {
    if d_prime == 0 {
        return Err(Error::InvalidArgument("need at least one component".into()));
    }
    if n_max < 2 {
        return Err(Error::InvalidArgument("n_max must be at least 2".into()));
    }
    let ones = InterpretableMask::ones(d_prime);
    let exhaustive = d_prime < 64 && (1u64 << d_prime) <= n_max as u64;
    if exhaustive {
        let total = 1u64 << d_prime;
        let mut masks = Vec::with_capacity(total as usize);
        masks.push(ones);
        masks.extend((0..total - 1).map(|v| InterpretableMask::from_index(v, d_prime)));
        return Ok((masks, true));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::with_capacity(n_max);
    seen.insert(ones.clone());
    let mut masks = vec![ones];
    while masks.len() < n_max {
        let candidate = InterpretableMask::new((0..d_prime).map(|_| rng.gen_bool(0.5)).collect());
        if seen.insert(candidate.clone()) {
            masks.push(candidate);
        }
    }
    Ok((masks, false))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel {
    Uniform,
    Exponential { width: f64 },
}

/// Kernel choice before the neighborhood is known: `Auto` means uniform on
/// exhaustive neighborhoods and exponential with the default width on
/// sampled ones.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KernelChoice {
    #[default]
    Auto,
    Uniform,
    Exponential {
        width: f64,
    },
}

impl KernelChoice {
    pub fn resolve(self, exhaustive: bool) -> Kernel {
        match self {
            KernelChoice::Auto if exhaustive => Kernel::Uniform,
            KernelChoice::Auto => Kernel::Exponential {
                width: DEFAULT_KERNEL_WIDTH,
            },
            KernelChoice::Uniform => Kernel::Uniform,
            KernelChoice::Exponential { width } => Kernel::Exponential { width },
        }
    }
}

/// `exp(−D²/width²)` with `D` the Hamming distance to all-ones divided by
/// `d′`, or 1 everywhere for the uniform kernel.
pub fn proximity_weights(masks: &[InterpretableMask], kernel: Kernel) -> Result<Vec<f64>> {
    if masks.is_empty() {
        return Err(Error::InvalidArgument("no masks".into()));
    }
    match kernel {
        Kernel::Uniform => Ok(vec![1.0; masks.len()]),
        Kernel::Exponential { width } => {
            if !width.is_finite() || width <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "kernel width must be positive, got {width}"
                )));
            }
            Ok(masks
                .iter()
                .map(|m| {
                    let d = (m.len() - m.count_ones()) as f64 / m.len() as f64;
                    (-(d * d) / (width * width)).exp()
                })
                .collect())
        }
    }
}
