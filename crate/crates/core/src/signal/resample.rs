//! Rational polyphase resampling with a Kaiser-windowed sinc low-pass.
//!
//! The output matches the zero-phase convention of common polyphase
//! resamplers: output sample `m` is centred on input time `m * q / p`.

use crate::error::{Error, Result};

pub const KAISER_BETA: f64 = 5.0;
/// Filter half-length, in taps of the up-sampled signal, per unit of `max(p, q)`.
pub const HALF_LEN_FACTOR: usize = 10;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Reduces `s_out / s_in` to coprime `(p, q)`. Rates are taken to micro-hertz precision.
pub fn rational_ratio(s_in: f64, s_out: f64) -> Result<(usize, usize)> {
    if !(s_in > 0.0 && s_out > 0.0 && s_in.is_finite() && s_out.is_finite()) {
        return Err(Error::Parameter(format!("sample rates must be positive, got {s_in} -> {s_out}")));
    }
    let scale = 1e6;
    let (a, b) = ((s_out * scale).round() as u64, (s_in * scale).round() as u64);
    if a == 0 || b == 0 {
        return Err(Error::Parameter(format!("sample rates {s_in} / {s_out} are below the supported precision")));
    }
    let g = gcd(a, b);
    Ok(((a / g) as usize, (b / g) as usize))
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Low-pass FIR of `2 * half_len + 1` taps with cutoff `1 / max(p, q)` of
/// the up-sampled Nyquist rate, unit DC gain, scaled by `p`.
pub fn design_filter(p: usize, q: usize) -> Vec<f64> {
    let max_rate = p.max(q);
    let half_len = HALF_LEN_FACTOR * max_rate;
    let taps = 2 * half_len + 1;
    let cutoff = 1.0 / max_rate as f64;
    let m = (taps - 1) as f64;
    let i0b = bessel_i0(KAISER_BETA);
    let mut h: Vec<f64> = (0..taps)
        .map(|n| {
            let r = 2.0 * n as f64 / m - 1.0;
            let w = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / i0b;
            cutoff * sinc(cutoff * (n as f64 - m / 2.0)) * w
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v *= p as f64 / dc);
    h
}

/// Resamples `x` from `p / q` with `(p, q)` coprime. Output length is `ceil(n p / q)`.
pub fn resample_poly(x: &[f64], p: usize, q: usize) -> Result<Vec<f64>> {
    if p == 0 || q == 0 {
        return Err(Error::Parameter(format!("resampling factors must be positive, got {p}/{q}")));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite sample {} at index {i}", x[i])));
    }
    let g = gcd(p as u64, q as u64) as usize;
    let (p, q) = (p / g, q / g);
    if p == 1 && q == 1 {
        return Ok(x.to_vec());
    }
    let h = design_filter(p, q);
    let half = (h.len() - 1) / 2;
    let n = x.len();
    let n_out = (n * p).div_ceil(q);
    let mut y = vec![0.0; n_out];
    for (m, out) in y.iter_mut().enumerate() {
        // y[m] = sum_i x[i] h[half + m q - p i], over taps inside the filter.
        let centre = half + m * q;
        let i_lo = centre.saturating_sub(h.len() - 1).div_ceil(p);
        let i_hi = (centre / p).min(n.saturating_sub(1));
        let mut acc = 0.0;
        if n > 0 && i_lo <= i_hi {
            for i in i_lo..=i_hi {
                acc += x[i] * h[centre - p * i];
            }
        }
        *out = acc;
    }
    Ok(y)
}

/// Resamples from `s_in` to `s_out` Hz.
pub fn resample(x: &[f64], s_in: f64, s_out: f64) -> Result<Vec<f64>> {
    let (p, q) = rational_ratio(s_in, s_out)?;
    resample_poly(x, p, q)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe() -> Vec<f64> {
        (0..40)
            .map(|i| {
                let i = i as f64;
                (0.3 * i).sin() + 0.5 * (1.7 * i).cos() + 0.01 * i
            })
            .collect()
    }

    fn close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            assert!((x - y).abs() < 1e-9, "[{i}] {x} vs {y}");
        }
    }

    // Reference outputs of scipy.signal.resample_poly (default Kaiser beta 5).
    #[test]
    fn matches_reference_down_2_3() {
        let want = [
            4.465861886789e-01, 8.120624542873e-02, 9.719944246043e-01, 1.143508887286e+00, 6.635705780155e-01,
            1.353369837274e+00, 5.359148392927e-02, 3.685641253129e-01, -3.131504687081e-01, -9.423374986667e-01,
            -3.601945419822e-01, -1.296157241772e+00, -2.496883263351e-01, -3.065503295033e-01, 1.864696603613e-02,
            1.102278769959e+00, 5.332885531518e-01, 1.639198480627e+00, 1.070689079981e+00, 9.304824869691e-01,
            1.088252564762e+00, -2.127406720723e-01, 3.365902997628e-01, -7.278843292355e-01, -6.199700510776e-01,
            -3.389158986048e-01, -7.670485998248e-01,
        ];
        close(&resample_poly(&probe(), 2, 3).unwrap(), &want);
    }

    #[test]
    fn matches_reference_25_64() {
        let want = [
            1.692988276410e-01, 6.698367189310e-01, 1.078603415473e+00, 8.036639458798e-01, 1.830286894539e-01,
            -5.221758045841e-01, -8.370014927480e-01, -6.120346911362e-01, 6.855657891526e-02, 8.164834153148e-01,
            1.245417019872e+00, 1.105404002026e+00, 5.229984205103e-01, -2.116332309768e-01, -5.912609115130e-01,
            -5.213654820233e-01,
        ];
        close(&resample_poly(&probe(), 25, 64).unwrap(), &want);
    }

    #[test]
    fn matches_reference_up_3_2() {
        let y = resample_poly(&probe(), 3, 2).unwrap();
        assert_eq!(y.len(), 60);
        close(&y[..6], &[5.003030867769e-01, 4.231776571107e-01, 7.513386062571e-02, 1.013047481630e-01, 6.611454457123e-01, 1.279838889395e+00]);
        close(&y[57..], &[-6.377509039802e-01, -9.548274413084e-01, -5.748693789489e-01]);
    }

    #[test]
    fn identity_ratio_is_exact() {
        let x = probe();
        assert_eq!(resample(&x, 100.0, 100.0).unwrap(), x);
        assert_eq!(resample_poly(&x, 7, 7).unwrap(), x);
    }

    #[test]
    fn rate_reduction() {
        assert_eq!(rational_ratio(256.0, 100.0).unwrap(), (25, 64));
        assert_eq!(rational_ratio(200.0, 100.0).unwrap(), (1, 2));
        assert_eq!(rational_ratio(128.0, 100.0).unwrap(), (25, 32));
        assert!(rational_ratio(0.0, 100.0).is_err());
    }

    #[test]
    fn sine_survives_decimation() {
        let x: Vec<f64> = (0..4000).map(|n| (2.0 * std::f64::consts::PI * 10.0 * n as f64 / 200.0).sin()).collect();
        let y = resample(&x, 200.0, 100.0).unwrap();
        assert_eq!(y.len(), 2000);
        for (m, &v) in y.iter().enumerate().skip(200).take(1600) {
            let want = (2.0 * std::f64::consts::PI * 10.0 * m as f64 / 100.0).sin();
            assert!((v - want).abs() < 0.01, "[{m}] {v} vs {want}");
        }
    }

    #[test]
    fn rejects_non_finite() {
        assert!(resample(&[1.0, f64::NAN], 200.0, 100.0).is_err());
    }
}
