//! Steady-state two-time correlations, detection filtering, the temporal
//! coherence function G¹(τ), and coherence-time fits.
//!
//! Correlations are assembled by averaging over both trajectories and
//! window start times; the per-trajectory lag sums are evaluated with FFTs.
//! Statistical errors come from batch means over fixed, index-ordered
//! trajectory batches, which also makes every reduction independent of the
//! worker count.

use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sde::{EnsembleResult, TrajectoryWindow};
use crate::C64;

/// Reduced steady-state correlations of the cavity amplitude.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationSet {
    /// Lag grid (µs), starting at 0.
    pub tau: Vec<f64>,
    /// ⟨Δa†(τ)Δa(0)⟩.
    pub c_adag_a: Vec<C64>,
    /// ⟨Δa(τ)Δa(0)⟩.
    pub c_a_a: Vec<C64>,
    /// Batch-mean standard error per lag (scalar scale for both channels).
    pub sigma: Vec<f64>,
    /// Full (ensemble and time) means.
    pub mean_a: C64,
    pub mean_adag: C64,
    /// Trajectories entering the averages.
    pub n_used: usize,
    pub n_batches: usize,
    /// Worst normalized deviation against the doubled-transient window,
    /// when a steadiness check ran.
    pub steadiness_deviation: Option<f64>,
}

/// Per-trajectory lag sums over one analysis window.
struct TrajCorr {
    c1: Vec<C64>,
    c2: Vec<C64>,
    mean_a: C64,
    mean_adag: C64,
}

/// Σ_j a[j+k]·b[j] for k = 0..=n_lags with j = 0..=m2, via FFT.
fn lag_sums(a: &[C64], b_trunc_len: usize, n_lags: usize, planner: &FftPlan) -> Vec<C64> {
    let l = planner.len;
    let mut fa: Vec<C64> = a.to_vec();
    fa.resize(l, C64::ZERO);
    planner.forward.process(&mut fa);
    let mut fb: Vec<C64> = a[..b_trunc_len].iter().map(|z| z.conj()).collect();
    fb.resize(l, C64::ZERO);
    planner.forward.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(fb.iter()) {
        *x *= y.conj();
    }
    planner.inverse.process(&mut fa);
    let scale = 1.0 / l as f64;
    fa[..=n_lags].iter().map(|z| z * scale).collect()
}

struct FftPlan {
    len: usize,
    forward: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inverse: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl FftPlan {
    fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }
}

fn window_corr(
    w: &TrajectoryWindow,
    offset: usize,
    window_len: usize,
    n_lags: usize,
    plan: &FftPlan,
) -> TrajCorr {
    let alpha = &w.alpha[offset..offset + window_len];
    let alpha_dag = &w.alpha_dag[offset..offset + window_len];
    let m2 = window_len - 1 - n_lags; // start times j = 0..=m2
    let b_len = m2 + 1;
    // c1[k] = Σ_j α†(j+k)·α(j): a = α†, b = α truncated.
    let mut c1 = {
        let mut fa: Vec<C64> = alpha_dag.to_vec();
        fa.resize(plan.len, C64::ZERO);
        plan.forward.process(&mut fa);
        let mut fb: Vec<C64> = alpha[..b_len].iter().map(|z| z.conj()).collect();
        fb.resize(plan.len, C64::ZERO);
        plan.forward.process(&mut fb);
        for (x, y) in fa.iter_mut().zip(fb.iter()) {
            *x *= y.conj();
        }
        plan.inverse.process(&mut fa);
        let scale = 1.0 / plan.len as f64;
        fa[..=n_lags].iter().map(|z| z * scale).collect::<Vec<C64>>()
    };
    // c2[k] = Σ_j α(j+k)·α(j).
    let mut c2 = lag_sums(alpha, b_len, n_lags, plan);
    let norm = 1.0 / b_len as f64;
    for v in c1.iter_mut() {
        *v *= norm;
    }
    for v in c2.iter_mut() {
        *v *= norm;
    }
    let mean_a = alpha.iter().sum::<C64>() / window_len as f64;
    let mean_adag = alpha_dag.iter().sum::<C64>() / window_len as f64;
    TrajCorr { c1, c2, mean_a, mean_adag }
}

fn reduce_window(
    windows: &[&TrajectoryWindow],
    offset: usize,
    window_len: usize,
    n_lags: usize,
    batch_size: usize,
) -> (Vec<C64>, Vec<C64>, Vec<f64>, C64, C64, usize) {
    let plan = FftPlan::new((2 * window_len).next_power_of_two());
    // Batch sums are computed in parallel but batches are fixed index
    // ranges, and the final combination runs in batch order: results do not
    // depend on the worker count.
    let batches: Vec<(Vec<C64>, Vec<C64>, C64, C64, usize)> = windows
        .par_chunks(batch_size)
        .map(|chunk| {
            let mut c1 = vec![C64::ZERO; n_lags + 1];
            let mut c2 = vec![C64::ZERO; n_lags + 1];
            let mut ma = C64::ZERO;
            let mut mad = C64::ZERO;
            for w in chunk {
                let tc = window_corr(w, offset, window_len, n_lags, &plan);
                for k in 0..=n_lags {
                    c1[k] += tc.c1[k];
                    c2[k] += tc.c2[k];
                }
                ma += tc.mean_a;
                mad += tc.mean_adag;
            }
            (c1, c2, ma, mad, chunk.len())
        })
        .collect();

    let n_used: usize = batches.iter().map(|b| b.4).sum();
    let nb = batches.len();
    let mut c1_tot = vec![C64::ZERO; n_lags + 1];
    let mut c2_tot = vec![C64::ZERO; n_lags + 1];
    let mut ma_tot = C64::ZERO;
    let mut mad_tot = C64::ZERO;
    for b in &batches {
        for k in 0..=n_lags {
            c1_tot[k] += b.0[k];
            c2_tot[k] += b.1[k];
        }
        ma_tot += b.2;
        mad_tot += b.3;
    }
    let inv = 1.0 / n_used as f64;
    for k in 0..=n_lags {
        c1_tot[k] *= inv;
        c2_tot[k] *= inv;
    }
    ma_tot *= inv;
    mad_tot *= inv;

    // Batch-mean spread around the overall mean (raw c1 channel sets the
    // scale; the reduced subtraction shifts both identically).
    let sigma: Vec<f64> = (0..=n_lags)
        .map(|k| {
            if nb < 2 {
                return f64::INFINITY;
            }
            let mut var = 0.0;
            for b in &batches {
                let bm = b.0[k] / b.4 as f64;
                var += (bm - c1_tot[k]).norm_sqr();
            }
            (var / (nb - 1) as f64 / nb as f64).sqrt()
        })
        .collect();

    (c1_tot, c2_tot, sigma, ma_tot, mad_tot, n_used)
}

/// Assembles reduced steady-state correlations from the retained windows.
///
/// When the ensemble retained a doubled-transient window, the same
/// correlations are recomputed there and compared; disagreement beyond the
/// combined statistical errors fails with [`Error::NotSteady`].
pub fn steady_correlations(result: &EnsembleResult) -> Result<CorrelationSet> {
    let usable: Vec<&TrajectoryWindow> = result.usable_windows().collect();
    if usable.is_empty() {
        return Err(Error::InvalidParam("no usable trajectories".into()));
    }
    let available = usable.iter().map(|w| w.alpha.len()).min().unwrap();
    let window_len = result.window_len.min(available);
    if window_len < 8 {
        return Err(Error::InvalidParam("window too short for correlations".into()));
    }
    // Correlation span T_A from the spec, capped so at least a few start
    // times remain for time averaging.
    let n_lags = result.corr_lags.clamp(1, window_len.saturating_sub(2));

    let (c1, c2, sigma, ma, mad, n_used) =
        reduce_window(&usable, 0, window_len, n_lags, result.batch_size.max(1));

    let mm = mad * ma;
    let c_adag_a: Vec<C64> = c1.iter().map(|v| v - mm).collect();
    let c_a_a: Vec<C64> = c2.iter().map(|v| v - ma * ma).collect();

    let mut steadiness = None;
    if let Some(offset) = result.shifted_window_offset {
        if offset + window_len <= available {
            let (c1b, _, sigb, mab, madb, _) =
                reduce_window(&usable, offset, window_len, n_lags, result.batch_size.max(1));
            let mmb = madb * mab;
            let scale = c_adag_a.iter().map(|v| v.norm()).fold(1e-300, f64::max);
            let mut worst = 0.0f64;
            let mut n_bad = 0usize;
            for k in 0..=n_lags {
                let diff = ((c1b[k] - mmb) - c_adag_a[k]).norm();
                let err = 3.0 * (sigma[k] + sigb[k]) + 1e-6 * scale;
                let d = diff / err;
                worst = worst.max(d);
                if d > 1.0 {
                    n_bad += 1;
                }
            }
            // Allow isolated 3σ excursions (many lags are compared), but a
            // broad or gross shift means the transient has not decayed.
            let bad_fraction = n_bad as f64 / (n_lags + 1) as f64;
            steadiness = Some(worst);
            if bad_fraction > 0.02 || worst > 3.0 {
                return Err(Error::NotSteady { shift: worst, allowed: 3.0 });
            }
        }
    }

    let tau: Vec<f64> = (0..=n_lags).map(|k| k as f64 * result.sample_dt).collect();
    Ok(CorrelationSet {
        tau,
        c_adag_a,
        c_a_a,
        sigma,
        mean_a: ma,
        mean_adag: mad,
        n_used,
        n_batches: usable.len().div_ceil(result.batch_size.max(1)),
        steadiness_deviation: steadiness,
    })
}

/// Output-quadrature correlation prior to detection filtering:
/// ⟨Δi(0)Δi(τ)⟩ = ½δ(τ) + (κ/2)(⟨Δa(τ)Δa(0)⟩ + ⟨Δa†(τ)Δa(0)⟩ + c.c.).
/// The δ term is carried symbolically as `delta_weight`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutputCorrelation {
    pub tau: Vec<f64>,
    /// Smooth part (real by construction).
    pub smooth: Vec<f64>,
    /// Coefficient of δ(τ).
    pub delta_weight: f64,
}

pub fn output_correlation(corr: &CorrelationSet, kappa: f64) -> OutputCorrelation {
    let smooth = corr
        .c_a_a
        .iter()
        .zip(corr.c_adag_a.iter())
        .map(|(caa, cada)| kappa * (caa + cada).re)
        .collect();
    OutputCorrelation { tau: corr.tau.clone(), smooth, delta_weight: 0.5 }
}

/// Composite detection filter: the dominant sideband is shifted down to an
/// intermediate frequency, a single-pole low-pass of the stated bandwidth
/// follows, and the result is resampled at the digitizer period.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FilterSpec {
    /// Intermediate frequency the dominant sideband is brought to (Hz).
    pub f_if_hz: f64,
    /// Single-pole low-pass bandwidth around the sideband (Hz).
    pub bandwidth_hz: f64,
    /// Digitizer sample period (µs).
    pub sample_period_us: f64,
    /// Rotating-frame offset of the sideband to downconvert (Hz); detected
    /// from the correlation spectrum when absent.
    pub f_sideband_hz: Option<f64>,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            // Dominant sideband brought to ~100 MHz, recorded at 500 MS/s.
            f_if_hz: 100.0e6,
            // Detection band around the sideband, matched to the κ scale of
            // the device resonances.
            bandwidth_hz: 11.0e6,
            sample_period_us: 0.002,
            f_sideband_hz: None,
        }
    }
}

/// Filtered (measured) correlation on the digitizer grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilteredCorrelation {
    pub tau: Vec<f64>,
    /// Complex demodulated correlation; Re is the I-quadrature correlation.
    pub value: Vec<C64>,
    /// Re(value): the measured ⟨ΔI(0)ΔI(τ)⟩ up to normalization.
    pub i_corr: Vec<f64>,
    /// Sideband offset used (Hz, rotating frame).
    pub f_sideband_hz: f64,
    pub f_if_hz: f64,
}

/// Dominant oscillation frequency of a real even correlation (cycles/µs).
fn dominant_frequency(smooth: &[f64], dtau: f64) -> f64 {
    let n = smooth.len();
    if n < 16 {
        return 0.0;
    }
    let mut buf: Vec<C64> = smooth
        .iter()
        .enumerate()
        .map(|(j, &v)| {
            let w = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * j as f64 / (n - 1) as f64).cos());
            C64::from(v * w)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    let powers: Vec<f64> = buf[..half].iter().map(|z| z.norm_sqr()).collect();
    let mut sorted = powers.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[half / 2];
    let (kmax, pmax) =
        powers.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(k, p)| (k, *p)).unwrap();
    if pmax > 10.0 * median.max(1e-300) {
        kmax as f64 / (n as f64 * dtau)
    } else {
        0.0
    }
}

/// Convolves the output correlation with the composite filter; the δ term
/// maps to the filter autocorrelation kernel itself.
pub fn apply_filter(out: &OutputCorrelation, spec: &FilterSpec) -> Result<FilteredCorrelation> {
    if out.tau.len() < 4 {
        return Err(Error::InvalidParam("correlation too short to filter".into()));
    }
    let dtau = out.tau[1] - out.tau[0];
    let nyquist_hz = 0.5 / spec.sample_period_us * 1e6;
    if spec.bandwidth_hz >= nyquist_hz {
        return Err(Error::InvalidParam(format!(
            "bandwidth {} Hz at or above Nyquist {} Hz of the sample period",
            spec.bandwidth_hz, nyquist_hz
        )));
    }
    if spec.bandwidth_hz <= 0.0 {
        return Err(Error::InvalidParam("bandwidth must be > 0".into()));
    }

    let f_sb_cyc = match spec.f_sideband_hz {
        Some(f) => f * 1e-6,
        None => dominant_frequency(&out.smooth, dtau),
    };
    let b_cyc = spec.bandwidth_hz * 1e-6;

    // Single-pole demodulation chain: correlation-domain kernel is the
    // filter autocorrelation πB e^{−2πB|τ|}, normalized to unit area.
    let tail = 8.0 / (2.0 * std::f64::consts::PI * b_cyc);
    let m_f = (tail / dtau).ceil() as usize;
    let n = out.tau.len();
    if n <= m_f + 2 {
        return Err(Error::InvalidParam(format!(
            "correlation span {} µs shorter than filter support {} µs",
            out.tau[n - 1],
            tail
        )));
    }
    let mut kernel: Vec<f64> = (0..=m_f)
        .map(|m| {
            let t = m as f64 * dtau;
            std::f64::consts::PI * b_cyc * (-2.0 * std::f64::consts::PI * b_cyc * t).exp()
        })
        .collect();
    // Unit DC gain on the grid; matters when the kernel is only a few
    // samples wide.
    let gain = (kernel[0] + 2.0 * kernel[1..].iter().sum::<f64>()) * dtau;
    for v in kernel.iter_mut() {
        *v /= gain;
    }

    // Shift the sideband to DC, then low-pass. The smooth part is even in τ
    // with D(−τ) = conj(D(τ)).
    let omega_sb = 2.0 * std::f64::consts::PI * f_sb_cyc;
    let d: Vec<C64> = out
        .smooth
        .iter()
        .enumerate()
        .map(|(k, &v)| C64::from_polar(v, omega_sb * (k as f64 * dtau)))
        .collect();
    let d_at = |idx: isize| -> C64 {
        if idx >= 0 {
            d[idx as usize]
        } else {
            d[(-idx) as usize].conj()
        }
    };

    let n_out = n - 1 - m_f;
    let omega_if = 2.0 * std::f64::consts::PI * spec.f_if_hz * 1e-6;
    let mut tau_f = Vec::with_capacity(n_out + 1);
    let mut value_f = Vec::with_capacity(n_out + 1);
    for k in 0..=n_out {
        let mut acc = kernel[0] * d[k];
        for m in 1..=m_f {
            acc += kernel[m] * (d_at(k as isize - m as isize) + d_at(k as isize + m as isize));
        }
        let smooth_part = acc * dtau;
        let tk = k as f64 * dtau;
        // δ(τ)·w convolved with the kernel: w·h(τ) with no grid factor.
        let delta_part = C64::from(out.delta_weight)
            * std::f64::consts::PI
            * b_cyc
            * (-2.0 * std::f64::consts::PI * b_cyc * tk).exp();
        let s = (smooth_part + delta_part) * C64::from_polar(1.0, -omega_if * tk);
        tau_f.push(tk);
        value_f.push(s);
    }

    // Resample onto the digitizer grid by linear interpolation.
    let t_max = tau_f[tau_f.len() - 1];
    let n_samp = (t_max / spec.sample_period_us).floor() as usize;
    let mut tau = Vec::with_capacity(n_samp + 1);
    let mut value = Vec::with_capacity(n_samp + 1);
    for j in 0..=n_samp {
        let t = j as f64 * spec.sample_period_us;
        let x = t / dtau;
        let i0 = (x.floor() as usize).min(value_f.len() - 1);
        let i1 = (i0 + 1).min(value_f.len() - 1);
        let frac = x - i0 as f64;
        let v = value_f[i0] * (1.0 - frac) + value_f[i1] * frac;
        tau.push(t);
        value.push(v);
    }
    let i_corr = value.iter().map(|z| z.re).collect();
    Ok(FilteredCorrelation {
        tau,
        value,
        i_corr,
        f_sideband_hz: f_sb_cyc * 1e6,
        f_if_hz: spec.f_if_hz,
    })
}

/// Envelope decay models fit to |G¹|.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvelopeModel {
    Exp,
    ExpPlusGauss,
}

/// Normalized coherence function with its envelope fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct G1Result {
    pub tau: Vec<f64>,
    /// G¹(τ), normalized to 1 at τ = 0.
    pub g1: Vec<f64>,
    /// |demodulated correlation| / its τ=0 value.
    pub envelope: Vec<f64>,
    /// Exponential coherence time (µs).
    pub t_coh: f64,
    /// Gaussian companion scale when the model is ExpPlusGauss (µs).
    pub tau_gauss: Option<f64>,
    pub model: EnvelopeModel,
    pub r2: f64,
    /// Number of oscillation peaks found in the envelope.
    pub n_peaks: usize,
}

/// Normalizes the filtered correlation into G¹(τ) and fits the coherence
/// time from the envelope decay.
///
/// The |peak| sequence of the envelope carries the fit when enough
/// oscillation/beating maxima exist; short records fall back to fitting the
/// full envelope samples. Fit quality below R² = 0.9 is an error.
pub fn g1_and_coherence(filt: &FilteredCorrelation) -> Result<G1Result> {
    let norm = filt.i_corr[0];
    if !(norm.abs() > 0.0) || !norm.is_finite() {
        return Err(Error::IllConditioned("zero-variance correlation".into()));
    }
    let g1: Vec<f64> = filt.i_corr.iter().map(|v| v / norm).collect();
    let env_norm = filt.value[0].norm();
    let envelope: Vec<f64> = filt.value.iter().map(|z| z.norm() / env_norm).collect();

    // Envelope maxima (τ=0 plus interior peaks above a noise cut). The cut
    // sits above the statistical floor estimated from the record tail, so
    // noise wiggles at large lag do not enter the decay fit.
    let tail_start = envelope.len() - (envelope.len() / 7).max(1);
    let mut tail: Vec<f64> = envelope[tail_start..].to_vec();
    tail.sort_by(f64::total_cmp);
    let floor = (2.5 * tail[tail.len() / 2]).max(1e-3);
    let mut peak_idx = vec![0usize];
    for i in 1..envelope.len() - 1 {
        if envelope[i] >= envelope[i - 1] && envelope[i] > envelope[i + 1] && envelope[i] > floor
        {
            peak_idx.push(i);
        }
    }
    let n_peaks = peak_idx.len().saturating_sub(1);

    let (ts, ys): (Vec<f64>, Vec<f64>) = if n_peaks >= 10 {
        let ts = peak_idx.iter().map(|&i| filt.tau[i]).collect();
        let ys = peak_idx.iter().map(|&i| envelope[i].ln()).collect();
        (ts, ys)
    } else {
        // Short-record fallback: every sample with meaningful weight.
        let cut = floor.max(5e-2);
        let mut ts = Vec::new();
        let mut ys = Vec::new();
        for (i, &e) in envelope.iter().enumerate() {
            if e > cut {
                ts.push(filt.tau[i]);
                ys.push(e.ln());
            }
        }
        (ts, ys)
    };
    if ts.len() < 4 {
        return Err(Error::FitPoor { r2: 0.0 });
    }

    let (exp_coef, exp_r2) = polyfit(&ts, &ys, 1);
    let (gauss_coef, gauss_r2) = polyfit(&ts, &ys, 2);

    // The exponential envelope is the extractor; the Gaussian companion only
    // takes over when the log-linear fit is genuinely poor (e.g. synthetic
    // 1/f-style contamination), not for mere statistical curvature.
    let mut model = EnvelopeModel::Exp;
    let mut rate = -exp_coef[1];
    let mut r2 = exp_r2;
    let mut tau_gauss = None;
    if gauss_coef[2] < 0.0 && exp_r2 < 0.95 && gauss_r2 > exp_r2 + 0.02 && -gauss_coef[1] > 0.0 {
        model = EnvelopeModel::ExpPlusGauss;
        rate = -gauss_coef[1];
        r2 = gauss_r2;
        tau_gauss = Some(1.0 / (-gauss_coef[2]).sqrt());
    }
    if r2 < 0.9 {
        return Err(Error::FitPoor { r2 });
    }
    if !(rate > 0.0) {
        return Err(Error::FitPoor { r2: 0.0 });
    }

    Ok(G1Result {
        tau: filt.tau.clone(),
        g1,
        envelope,
        t_coh: 1.0 / rate,
        tau_gauss,
        model,
        r2,
        n_peaks,
    })
}

/// Least-squares polynomial fit returning (coefficients ascending, R²).
fn polyfit(ts: &[f64], ys: &[f64], degree: usize) -> (Vec<f64>, f64) {
    let n = ts.len();
    let m = degree + 1;
    // Normal equations on the (tiny) Vandermonde system.
    let mut ata = vec![vec![0.0f64; m]; m];
    let mut atb = vec![0.0f64; m];
    for (&t, &y) in ts.iter().zip(ys.iter()) {
        let mut pows = vec![1.0f64; m];
        for k in 1..m {
            pows[k] = pows[k - 1] * t;
        }
        for r in 0..m {
            atb[r] += pows[r] * y;
            for c in 0..m {
                ata[r][c] += pows[r] * pows[c];
            }
        }
    }
    // Gaussian elimination with partial pivoting.
    let mut a = ata;
    let mut b = atb;
    for col in 0..m {
        let piv = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        if d.abs() < 1e-300 {
            return (vec![0.0; m], 0.0);
        }
        for r in 0..m {
            if r != col {
                let f = a[r][col] / d;
                for c in 0..m {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let coef: Vec<f64> = (0..m).map(|i| b[i] / a[i][i]).collect();

    let mean_y = ys.iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = ys.iter().map(|y| (y - mean_y) * (y - mean_y)).sum();
    let ss_res: f64 = ts
        .iter()
        .zip(ys.iter())
        .map(|(&t, &y)| {
            let mut fit = 0.0;
            let mut pw = 1.0;
            for c in &coef {
                fit += c * pw;
                pw *= t;
            }
            (y - fit) * (y - fit)
        })
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (coef, r2)
}

/// Fit of T_coh = a(γ_φ + bΛ)⁻¹ over nonlinearity sweeps.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TcohLawFit {
    pub a: f64,
    pub b: f64,
    pub r2: f64,
}

/// Fits (a, b) by linear least squares in 1/T_coh = γ_φ/a + (b/a)Λ followed
/// by Gauss–Newton polish on the nonlinear residuals.
pub fn fit_tcoh_law(points: &[(f64, f64)], gamma_phi: f64) -> Result<TcohLawFit> {
    if points.len() < 4 {
        return Err(Error::InvalidParam("need at least 4 (Λ, T_coh) points".into()));
    }
    let lmin = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let lmax = points.iter().map(|p| p.0).fold(0.0f64, f64::max);
    if !(lmin > 0.0) || lmax / lmin < 3.0 {
        return Err(Error::IllConditioned("Λ values must span a wide range".into()));
    }
    if !(gamma_phi > 0.0) {
        return Err(Error::IllConditioned(
            "a and b are only jointly identifiable with γ_φ > 0".into(),
        ));
    }
    let ts: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| 1.0 / p.1).collect();
    let (coef, _) = polyfit(&ts, &ys, 1);
    let (u, v) = (coef[0], coef[1]);
    if !(u > 0.0) || !(v > 0.0) {
        return Err(Error::IllConditioned("inverse law fit produced nonpositive slope".into()));
    }
    let mut a = gamma_phi / u;
    let mut b = v * a;

    // Gauss–Newton on r_i = a/(γφ + bΛ_i) − T_i.
    for _ in 0..10 {
        let mut jt_j = [[0.0f64; 2]; 2];
        let mut jt_r = [0.0f64; 2];
        for &(lam, t) in points {
            let den = gamma_phi + b * lam;
            let r = a / den - t;
            let da = 1.0 / den;
            let db = -a * lam / (den * den);
            jt_j[0][0] += da * da;
            jt_j[0][1] += da * db;
            jt_j[1][0] += db * da;
            jt_j[1][1] += db * db;
            jt_r[0] += da * r;
            jt_r[1] += db * r;
        }
        let det = jt_j[0][0] * jt_j[1][1] - jt_j[0][1] * jt_j[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        let step_a = (jt_j[1][1] * jt_r[0] - jt_j[0][1] * jt_r[1]) / det;
        let step_b = (jt_j[0][0] * jt_r[1] - jt_j[1][0] * jt_r[0]) / det;
        a -= step_a;
        b -= step_b;
        if step_a.abs() < 1e-14 * a.abs() && step_b.abs() < 1e-14 * b.abs() {
            break;
        }
    }

    let mean_t = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - mean_t).powi(2)).sum();
    let ss_res: f64 =
        points.iter().map(|p| (a / (gamma_phi + b * p.0) - p.1).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(TcohLawFit { a, b, r2 })
}

/// Outcome of the pure-dephasing estimation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaPhiEstimate {
    /// Candidate minimizing the weighted deviation.
    pub best: f64,
    /// (candidate, objective) pairs.
    pub objective: Vec<(f64, f64)>,
}

/// Selects the pure-dephasing rate whose simulated T_coh-vs-power curve
/// best matches the target, by weighted squared deviation (weights 1/T²).
pub fn estimate_gamma_phi<F>(
    target: &[(f64, f64)],
    candidates: &[f64],
    mut simulate: F,
) -> Result<GammaPhiEstimate>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    if target.is_empty() || candidates.is_empty() {
        return Err(Error::InvalidParam("need target points and candidates".into()));
    }
    let mut objective = Vec::with_capacity(candidates.len());
    for &gp in candidates {
        let mut obj = 0.0;
        for &(power, t_target) in target {
            let t_sim = simulate(gp, power)?;
            let w = 1.0 / (t_target * t_target);
            obj += w * (t_sim - t_target) * (t_sim - t_target);
        }
        objective.push((gp, obj));
    }
    let (best, best_obj) =
        objective.iter().cloned().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let worst = objective.iter().map(|o| o.1).fold(0.0f64, f64::max);
    if worst - best_obj <= 1e-3 * worst.max(1e-300) {
        return Err(Error::Unidentifiable { spread: worst - best_obj });
    }
    Ok(GammaPhiEstimate { best, objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn output_correlation_structure() {
        // Zero input correlations leave only the delta term.
        let corr = CorrelationSet {
            tau: (0..64).map(|k| k as f64 * 0.01).collect(),
            c_adag_a: vec![C64::ZERO; 64],
            c_a_a: vec![C64::ZERO; 64],
            sigma: vec![0.0; 64],
            mean_a: C64::ZERO,
            mean_adag: C64::ZERO,
            n_used: 1,
            n_batches: 1,
            steadiness_deviation: None,
        };
        let out = output_correlation(&corr, 2.0);
        assert!(out.smooth.iter().all(|&v| v == 0.0));
        assert_eq!(out.delta_weight, 0.5);

        // Synthetic exponential-cosine input reproduces the closed form.
        let tau0 = 0.1;
        let delta = 40.0;
        let kappa = 3.0;
        let caa: Vec<C64> = (0..64)
            .map(|k| {
                let t = k as f64 * 0.01;
                C64::from((-t / tau0).exp() * (delta * t).cos())
            })
            .collect();
        let corr2 = CorrelationSet { c_a_a: caa.clone(), c_adag_a: caa.clone(), ..corr };
        let out2 = output_correlation(&corr2, kappa);
        for k in 0..64 {
            let t = k as f64 * 0.01;
            let expect = kappa * 2.0 * (-t / tau0).exp() * (delta * t).cos();
            assert_relative_eq!(out2.smooth[k], expect, max_relative = 1e-12, epsilon = 1e-12);
        }
    }

    #[test]
    fn filter_shift_theorem() {
        // A wide-open filter with zero IF is the identity on the smooth
        // part; with an IF it multiplies by e^{−i2πf τ} before Re.
        let m = 2048;
        let dtau = 0.002;
        let smooth: Vec<f64> =
            (0..m).map(|k| (-(k as f64) * dtau / 5.0).exp() * (30.0 * k as f64 * dtau).cos()).collect();
        let out = OutputCorrelation {
            tau: (0..m).map(|k| k as f64 * dtau).collect(),
            smooth: smooth.clone(),
            delta_weight: 0.0,
        };
        let spec = FilterSpec {
            f_if_hz: 0.0,
            bandwidth_hz: 200.0e6,
            sample_period_us: dtau,
            f_sideband_hz: Some(0.0),
        };
        let filt = apply_filter(&out, &spec).unwrap();
        for k in 0..filt.tau.len() {
            assert!((filt.i_corr[k] - smooth[k]).abs() < 0.02 * (smooth[k].abs() + 0.1));
        }

        let spec_if = FilterSpec { f_if_hz: 25.0e6, ..spec };
        let filt_if = apply_filter(&out, &spec_if).unwrap();
        for k in 0..filt_if.tau.len() {
            let t = filt_if.tau[k];
            let carrier = (2.0 * std::f64::consts::PI * 25.0 * t).cos();
            let expect = smooth[k] * carrier;
            assert!(
                (filt_if.i_corr[k] - expect).abs() < 0.05 * (expect.abs() + 0.1),
                "k={k}: {} vs {}",
                filt_if.i_corr[k],
                expect
            );
        }
    }

    #[test]
    fn synthetic_g1_recovers_coherence_time() {
        // e^{−τ/20µs}·cos(2π·100MHz·τ) → T_coh = 20 µs within 1%.
        let t_coh = 20.0;
        let f_if = 100.0; // cycles/µs
        let dtau = 0.002;
        let m = 40_000;
        let tau: Vec<f64> = (0..m).map(|k| k as f64 * dtau).collect();
        let value: Vec<C64> = tau
            .iter()
            .map(|&t| C64::from_polar((-t / t_coh).exp(), -2.0 * std::f64::consts::PI * f_if * t))
            .collect();
        let filt = FilteredCorrelation {
            tau: tau.clone(),
            i_corr: value.iter().map(|z| z.re).collect(),
            value,
            f_sideband_hz: 100.0e6,
            f_if_hz: 100.0e6,
        };
        let g1 = g1_and_coherence(&filt).unwrap();
        assert_relative_eq!(g1.t_coh, t_coh, max_relative = 0.01);
        assert_eq!(g1.g1[0], 1.0);
        assert!(g1.r2 > 0.99);
    }

    #[test]
    fn tcoh_law_fit_recovers_generator() {
        // Synthetic data generated from the law itself.
        let (a, b) = (1.19, 0.55);
        let gamma_phi = 0.0126; // 2 kHz in rad/µs
        let lams = [0.01, 0.03, 0.1, 0.3, 1.0];
        let pts: Vec<(f64, f64)> =
            lams.iter().map(|&l| (l, a / (gamma_phi + b * l))).collect();
        let fit = fit_tcoh_law(&pts, gamma_phi).unwrap();
        assert_relative_eq!(fit.a, a, max_relative = 1e-6);
        assert_relative_eq!(fit.b, b, max_relative = 1e-6);

        // γφ-dominated limit: T → a/γφ as Λ → 0.
        let t0 = fit.a / gamma_phi;
        assert_relative_eq!(a / (gamma_phi + b * 1e-12), t0, max_relative = 1e-6);
    }

    #[test]
    fn gamma_phi_estimator_grid_recovery() {
        let (a, b) = (1.19, 0.55);
        let lam = 0.0375;
        let truth = 0.0126;
        // Target generated by the same law the "simulator" uses.
        let powers = [-75.0, -74.0, -73.0];
        let target: Vec<(f64, f64)> =
            powers.iter().map(|&p| (p, a / (truth + b * lam))).collect();
        let candidates = [0.0, 0.63e-2, 1.26e-2, 1.89e-2];
        let est = estimate_gamma_phi(&target, &candidates, |gp, _power| {
            Ok(a / (gp + b * lam))
        })
        .unwrap();
        assert_relative_eq!(est.best, truth, max_relative = 1e-12);

        // γφ = 0 target lands on the lower grid edge.
        let target0: Vec<(f64, f64)> =
            powers.iter().map(|&p| (p, a / (b * lam))).collect();
        let est0 = estimate_gamma_phi(&target0, &candidates, |gp, _| Ok(a / (gp + b * lam)))
            .unwrap();
        assert_eq!(est0.best, 0.0);
    }

    #[test]
    fn flat_objective_is_unidentifiable() {
        let target = [(-75.0, 10.0)];
        let err = estimate_gamma_phi(&target, &[0.0, 1.0, 2.0], |_, _| Ok(10.0));
        assert!(matches!(err, Err(Error::Unidentifiable { .. })));
    }
}
