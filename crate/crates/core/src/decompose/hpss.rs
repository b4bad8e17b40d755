use super::{Component, Decomposer, Decomposition};
use crate::error::{Error, Result};
use crate::signal::{istft, stft_with, AudioBuffer, StftConfig};

pub const DEFAULT_KERNEL: usize = 31;

/// Guards the soft masks against silent bins.
const MASK_EPS: f64 = 1e-10;

/// Median-filtering harmonic/percussive separation.
///
/// The harmonic estimate `H` is the median of `|X|` along time, the
/// percussive estimate `P` the median along frequency. Soft masks
/// `H²/(H²+P²+ε)` and `P²/(H²+P²+ε)` are applied to the complex STFT and
/// inverted. Whatever the masks leave out becomes the residual.
pub fn hpss_decompose(
    mix: &AudioBuffer,
    harmonic_kernel: usize,
    percussive_kernel: usize,
) -> Result<Decomposition> {
    let config = StftConfig::default();
    if mix.len() < config.n_fft {
        return Err(Error::InvalidArgument(format!(
            "HPSS needs at least {} samples, got {}",
            config.n_fft,
            mix.len()
        )));
    }
    if harmonic_kernel == 0 || percussive_kernel == 0 {
        return Err(Error::InvalidArgument("median kernels must be non-empty".into()));
    }
    let spec = stft_with(mix, config)?;
    let (n_frames, n_freqs) = (spec.n_frames(), spec.n_freqs());
    let mag = spec.magnitudes();

    let mut harmonic = vec![0.0; mag.len()];
    let mut window = Vec::with_capacity(harmonic_kernel.max(percussive_kernel));
    for f in 0..n_freqs {
        for t in 0..n_frames {
            window.clear();
            window.extend(
                centered(t, harmonic_kernel, n_frames).map(|tt| mag[tt * n_freqs + f]),
            );
            harmonic[t * n_freqs + f] = median(&mut window);
        }
    }
    let mut percussive = vec![0.0; mag.len()];
    for t in 0..n_frames {
        let row = &mag[t * n_freqs..(t + 1) * n_freqs];
        for f in 0..n_freqs {
            window.clear();
            window.extend(centered(f, percussive_kernel, n_freqs).map(|ff| row[ff]));
            percussive[t * n_freqs + f] = median(&mut window);
        }
    }

    let (mut mask_h, mut mask_p) = (vec![0.0; mag.len()], vec![0.0; mag.len()]);
    for i in 0..mag.len() {
        let (h2, p2) = (harmonic[i] * harmonic[i], percussive[i] * percussive[i]);
        let denom = h2 + p2 + MASK_EPS;
        mask_h[i] = h2 / denom;
        mask_p[i] = p2 / denom;
    }
    let h_audio = istft(&spec.masked(&mask_h), Some(mix.len()))?;
    let p_audio = istft(&spec.masked(&mask_p), Some(mix.len()))?;
    let components = vec![
        Component {
            label: "harmonic".into(),
            segment_index: 0,
            audio: h_audio,
        },
        Component {
            label: "percussive".into(),
            segment_index: 0,
            audio: p_audio,
        },
    ];
    Decomposition::with_computed_residual(
        mix.clone(),
        components,
        vec!["harmonic".into(), "percussive".into()],
        1,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HpssDecomposer {
    pub harmonic_kernel: usize,
    pub percussive_kernel: usize,
}

impl Default for HpssDecomposer {
    fn default() -> Self {
        Self {
            harmonic_kernel: DEFAULT_KERNEL,
            percussive_kernel: DEFAULT_KERNEL,
        }
    }
}

impl Decomposer for HpssDecomposer {
    fn decompose(&self, mix: &AudioBuffer) -> Result<Decomposition> {
        hpss_decompose(mix, self.harmonic_kernel, self.percussive_kernel)
    }

    fn name(&self) -> String {
        format!("hpss(h={},p={})", self.harmonic_kernel, self.percussive_kernel)
    }
}

/// Indices of a `kernel`-wide window centered on `i`, mirrored at the
/// edges (`d c b a | a b c d`).
fn centered(i: usize, kernel: usize, n: usize) -> impl Iterator<Item = usize> {
    let half = (kernel / 2) as isize;
    let n = n as isize;
    (-half..kernel as isize - half).map(move |k| {
        let mut j = i as isize + k;
        loop {
            if j < 0 {
                j = -j - 1;
            } else if j >= n {
                j = 2 * n - j - 1;
            } else {
                break j as usize;
            }
        }
    })
}

fn median(values: &mut [f64]) -> f64 {
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}
