//! Physical-layer simulation: power normalization, the learned channel
//! encoder/decoder, real/complex symbol mapping, AWGN, and the lossless
//! side-channel budget.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::{Mlp, ParamStore, Tape, Var};

/// Bits per transmitted parameter in rate accounting.
pub const BITS_PER_PARAMETER: usize = 16;

/// Per-real-entry mean square that gives complex symbols unit mean power.
pub const UNIT_SYMBOL_MEAN_SQ: f64 = 0.5;

/// Scales a real block so that pairing adjacent entries into complex
/// symbols yields mean `|symbol|^2 = 1`. Returns the scaled block and the
/// applied scale.
pub fn power_normalize(x: &[f64]) -> Result<(Vec<f64>, f64)> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("power normalization of non-finite input"));
    }
    let sum_sq: f64 = x.iter().map(|v| v * v).sum();
    if !(sum_sq > 0.0) {
        return Err(Error::invalid("power normalization of an all-zero signal"));
    }
    let scale = (UNIT_SYMBOL_MEAN_SQ * x.len() as f64 / sum_sq).sqrt();
    Ok((x.iter().map(|v| v * scale).collect(), scale))
}

/// Mean `|z|^2`.
pub fn mean_power(symbols: &[Complex64]) -> f64 {
    symbols.iter().map(|z| z.norm_sqr()).sum::<f64>() / symbols.len() as f64
}

/// Column `2k` becomes the real part and `2k + 1` the imaginary part of
/// symbol `k` in each row.
pub fn to_complex(m: &[f64], cols: usize) -> Result<Vec<Complex64>> {
    if cols % 2 != 0 {
        return Err(Error::shape(format!("complex mapping needs an even width, got {cols}")));
    }
    if cols == 0 || m.len() % cols != 0 {
        return Err(Error::shape(format!("{} values do not form rows of {cols}", m.len())));
    }
    Ok(m.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
}

pub fn from_complex(symbols: &[Complex64]) -> Vec<f64> {
    symbols.iter().flat_map(|z| [z.re, z.im]).collect()
}

/// Noise variance per complex dimension for unit signal power.
pub fn noise_variance(snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        10f64.powf(-snr_db / 10.0)
    }
}

/// i.i.d. `CN(0, sigma2)` samples: real and imaginary parts each
/// `N(0, sigma2 / 2)`.
pub fn complex_noise(n: usize, sigma2: f64, rng: &mut impl Rng) -> Vec<Complex64> {
    let sd = (sigma2 / 2.0).sqrt();
    (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(sd * re, sd * im)
        })
        .collect()
}

/// `M' = M + n`. An infinite SNR returns the input unchanged and draws no
/// randomness.
pub fn awgn(symbols: &[Complex64], snr_db: f64, rng: &mut impl Rng) -> Vec<Complex64> {
    let sigma2 = noise_variance(snr_db);
    if sigma2 == 0.0 {
        return symbols.to_vec();
    }
    let noise = complex_noise(symbols.len(), sigma2, rng);
    symbols.iter().zip(noise).map(|(s, n)| s + n).collect()
}

/// Clean and received complex symbols of one cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelFrame {
    pub clean: Vec<Complex64>,
    pub noisy: Vec<Complex64>,
    pub sigma2: f64,
}

impl ChannelFrame {
    pub fn transmit(clean: Vec<Complex64>, snr_db: f64, rng: &mut impl Rng) -> Self {
        let noisy = awgn(&clean, snr_db, rng);
        Self {
            clean,
            noisy,
            sigma2: noise_variance(snr_db),
        }
    }
}

/// AWGN noise for an interleaved real block `[re0, im0, re1, ...]`; `None`
/// when the SNR is infinite.
pub fn interleaved_noise(len: usize, snr_db: f64, rng: &mut impl Rng) -> Option<Vec<f64>> {
    let sigma2 = noise_variance(snr_db);
    if sigma2 == 0.0 {
        return None;
    }
    Some(from_complex(&complex_noise(len / 2, sigma2, rng)))
}

/// Learned channel encoder (d -> 2d -> 2d) and decoder (2d -> 2d -> d),
/// applied row-wise with shared weights.
#[derive(Debug, Clone)]
pub struct ChannelCodec {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub d: usize,
}

pub const CHANNEL_ENCODER: &str = "chan_enc";
pub const CHANNEL_DECODER: &str = "chan_dec";

impl ChannelCodec {
    pub fn new(store: &mut ParamStore, d: usize, rng: &mut impl Rng) -> Result<Self> {
        let encoder = Mlp::new(store, CHANNEL_ENCODER, &[d, 2 * d, 2 * d], false, rng)?;
        let decoder = Mlp::new(store, CHANNEL_DECODER, &[2 * d, 2 * d, d], false, rng)?;
        Ok(Self { encoder, decoder, d })
    }

    /// `[S, d] -> [S, 2d]`.
    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.shape(x).last().copied().unwrap_or(0);
        if w != self.d {
            return Err(Error::shape(format!("channel encoder expects width {}, got {w}", self.d)));
        }
        self.encoder.forward(tape, x)
    }

    /// `[S, 2d] -> [S, d]`.
    pub fn decode(&self, tape: &mut Tape, m: Var) -> Result<Var> {
        let w = tape.shape(m).last().copied().unwrap_or(0);
        if w != 2 * self.d {
            return Err(Error::shape(format!("channel decoder expects width {}, got {w}", 2 * self.d)));
        }
        self.decoder.forward(tape, m)
    }

    /// Transmit chain after the semantic encoder: normalize, encode,
    /// normalize to unit symbol power, add AWGN, decode.
    pub fn transmit(&self, tape: &mut Tape, local: Var, noise: Option<&[f64]>) -> Result<Var> {
        let x = tape.power_normalize(local, UNIT_SYMBOL_MEAN_SQ)?;
        let m = self.encode(tape, x)?;
        let m = tape.power_normalize(m, UNIT_SYMBOL_MEAN_SQ)?;
        let received = match noise {
            Some(n) => tape.add_const(m, n)?,
            None => m,
        };
        self.decode(tape, received)
    }
}

/// Channel capacity in bits per symbol.
pub fn capacity(snr_db: f64) -> f64 {
    (1.0 + 10f64.powf(snr_db / 10.0)).log2()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub snr_db: f64,
    pub success_prob: f64,
    pub bit_use: u64,
    pub symbol_use: u64,
    pub capacity: f64,
}

/// Worst-case channel uses for delivering `bit_use` bits losslessly with a
/// rate-1/2 code whose per-block success probability is `p`:
/// `ceil((1/p) * 2 * bits / C)`.
pub fn lossless_budget(bit_use: u64, snr_db: f64, p: f64) -> Result<LinkBudget> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("success probability {p} must lie in (0, 1]")));
    }
    let c = capacity(snr_db);
    if !(c > 0.0) {
        return Err(Error::invalid(format!("capacity at {snr_db} dB is {c}")));
    }
    let exact = (1.0 / p) * (2.0 * bit_use as f64 / c);
    // keep exact integers from rounding up through representation error
    let nearest = exact.round();
    let symbols = if (exact - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        exact.ceil()
    };
    Ok(LinkBudget {
        snr_db,
        success_prob: p,
        bit_use,
        symbol_use: symbols as u64,
        capacity: c,
    })
}

/// Transmission volume of one cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateReport {
    pub points: usize,
    /// Centroids `S x 3` plus global vector `D'` at 16 bits each.
    pub lossless_bits: u64,
    pub lossless_symbols: u64,
    /// Complex channel uses carrying the local semantics.
    pub analog_symbols: u64,
    pub symbols_per_point: f64,
    /// Everything, analog semantics included, at 16 bits per parameter.
    pub total_bits: u64,
    pub bits_per_point: f64,
}

pub fn rate_report(s: usize, d: usize, d_prime: usize, n: usize, snr_db: f64, p: f64) -> Result<RateReport> {
    if s == 0 || d == 0 || n == 0 {
        return Err(Error::invalid("rate report needs positive S, d and N"));
    }
    let lossless_bits = ((s * 3 + d_prime) * BITS_PER_PARAMETER) as u64;
    let budget = lossless_budget(lossless_bits, snr_db, p)?;
    let analog_symbols = (s * d) as u64;
    let total_bits = lossless_bits + (s * d * BITS_PER_PARAMETER) as u64;
    Ok(RateReport {
        points: n,
        lossless_bits,
        lossless_symbols: budget.symbol_use,
        analog_symbols,
        symbols_per_point: (budget.symbol_use + analog_symbols) as f64 / n as f64,
        total_bits,
        bits_per_point: total_bits as f64 / n as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_inputs, check_params, project};
    use crate::nn::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn power_normalize_examples() {
        let (y, _) = power_normalize(&[3.0; 16]).unwrap();
        assert!((mean_power(&to_complex(&y, 16).unwrap()) - 1.0).abs() < 1e-15);
        let x: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
        let x10: Vec<f64> = x.iter().map(|v| v * 10.0).collect();
        let (a, sa) = power_normalize(&x).unwrap();
        let (b, sb) = power_normalize(&x10).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-14);
        }
        assert!((sa / sb - 10.0).abs() < 1e-12);
        assert!(power_normalize(&[0.0; 4]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g: Vec<f64> = (0..64 * 8).map(|_| rng.sample(StandardNormal)).collect();
        let (n, _) = power_normalize(&g).unwrap();
        assert!((mean_power(&to_complex(&n, 8).unwrap()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn complex_mapping() {
        let z = to_complex(&[1.0, 2.0, 3.0, 4.0], 4).unwrap();
        assert_eq!(z, vec![Complex64::new(1.0, 2.0), Complex64::new(3.0, 4.0)]);
        assert_eq!(from_complex(&z), vec![1.0, 2.0, 3.0, 4.0]);
        assert!(to_complex(&[0.0; 6], 3).is_err());
        assert!(to_complex(&[0.0; 8], 4).unwrap().iter().all(|z| z.norm_sqr() == 0.0));
    }

    #[test]
    fn infinite_snr_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = vec![Complex64::new(0.3, -1.0); 10];
        assert_eq!(awgn(&z, f64::INFINITY, &mut rng), z);
        assert!(interleaved_noise(20, f64::INFINITY, &mut rng).is_none());
    }

    #[test]
    fn awgn_is_reproducible() {
        let z = vec![Complex64::new(1.0, 0.0); 100];
        let a = awgn(&z, 3.0, &mut ChaCha8Rng::seed_from_u64(4));
        let b = awgn(&z, 3.0, &mut ChaCha8Rng::seed_from_u64(4));
        let c = awgn(&z, 3.0, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn noise_statistics() {
        let n = 1_000_000;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let z0 = complex_noise(n, noise_variance(0.0), &mut rng);
        assert!((mean_power(&z0) - 1.0).abs() < 0.01);

        let signal: Vec<Complex64> = (0..n)
            .map(|i| Complex64::from_polar(1.0, i as f64 * 0.731))
            .collect();
        let frame = ChannelFrame::transmit(signal, 5.0, &mut rng);
        let noise: Vec<Complex64> = frame.noisy.iter().zip(&frame.clean).map(|(a, b)| a - b).collect();
        let snr = 10.0 * (mean_power(&frame.clean) / mean_power(&noise)).log10();
        assert!((snr - 5.0).abs() < 0.1, "{snr}");

        let a = complex_noise(n, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let b = complex_noise(n, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let corr = a.iter().zip(&b).map(|(x, y)| x.re * y.re).sum::<f64>()
            / (a.iter().map(|x| x.re * x.re).sum::<f64>() * b.iter().map(|y| y.re * y.re).sum::<f64>()).sqrt();
        assert!(corr.abs() < 0.01, "{corr}");
    }

    #[test]
    fn codec_shapes_and_row_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let codec = ChannelCodec::new(&mut store, 8, &mut rng).unwrap();
        let x = Tensor::from_fn(&[64, 8], |i| ((i * 7) % 13) as f64 / 13.0 - 0.4);
        let mut x2 = x.clone();
        x2.data_mut()[5 * 8 + 3] += 0.5;
        let mut tape = Tape::new(&store);
        let a = tape.input(x);
        let b = tape.input(x2);
        let ma = codec.encode(&mut tape, a).unwrap();
        let mb = codec.encode(&mut tape, b).unwrap();
        assert_eq!(tape.shape(ma), &[64, 16]);
        let ya = codec.decode(&mut tape, ma).unwrap();
        let yb = codec.decode(&mut tape, mb).unwrap();
        assert_eq!(tape.shape(ya), &[64, 8]);
        for (vals_a, vals_b, w) in [
            (tape.value(ma).data(), tape.value(mb).data(), 16),
            (tape.value(ya).data(), tape.value(yb).data(), 8),
        ] {
            for r in 0..64 {
                let same = vals_a[r * w..(r + 1) * w] == vals_b[r * w..(r + 1) * w];
                assert_eq!(same, r != 5, "row {r}");
            }
        }
        let bad = tape.input(Tensor::zeros(&[2, 7]));
        assert!(codec.encode(&mut tape, bad).is_err());
    }

    #[test]
    fn codec_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let codec = ChannelCodec::new(&mut store, 4, &mut rng).unwrap();
        let x = Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.91).cos());
        let noise: Vec<f64> = (0..24).map(|i| (i as f64 * 0.3).sin() * 0.1).collect();
        let f = |t: &mut Tape, v: &[Var]| {
            let y = codec.transmit(t, v[0], Some(&noise))?;
            project(t, y, 21)
        };
        assert!(check_inputs(&store, &[x.clone()], f, 1e-6).unwrap() < 1e-4);
        assert!(check_params(&store, &[x], f, 1e-6, 32).unwrap() < 1e-4);
    }

    #[test]
    fn capacity_values() {
        assert_eq!(capacity(0.0), 1.0);
        assert!((capacity(10.0) - 11f64.log2()).abs() < 1e-12);
        assert!((capacity(10.0) - 3.4594).abs() < 1e-4);
        assert_eq!(capacity(f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn budget_examples() {
        assert_eq!(lossless_budget(3072, 0.0, 0.9).unwrap().symbol_use, 6827);
        assert_eq!(lossless_budget(0, 0.0, 0.9).unwrap().symbol_use, 0);
        assert_eq!(lossless_budget(64, 0.0, 1.0).unwrap().symbol_use, 128);
        assert!(lossless_budget(64, f64::NEG_INFINITY, 0.9).is_err());
        assert_eq!(lossless_budget(64, f64::INFINITY, 0.9).unwrap().symbol_use, 0);
        assert!(lossless_budget(64, 0.0, 0.0).is_err());
        assert!(lossless_budget(64, 0.0, 1.5).is_err());
    }

    proptest::proptest! {
        #[test]
        fn normalized_power_is_one(x in proptest::collection::vec(-1e3f64..1e3, 1..64)) {
            let mut x = x;
            x.push(1.0);
            if x.len() % 2 == 1 {
                x.push(-0.5);
            }
            let (y, _) = power_normalize(&x).unwrap();
            let p = mean_power(&to_complex(&y, 2).unwrap());
            proptest::prop_assert!((p - 1.0).abs() < 1e-9);
            proptest::prop_assert_eq!(from_complex(&to_complex(&y, 2).unwrap()), y);
        }

        #[test]
        fn budget_is_monotone(bits in 0u64..100_000, snr in -10.0f64..20.0, ds in 0.0f64..5.0,
                              p in 0.05f64..1.0, dp in 0.0f64..0.5, db in 0u64..1000) {
            let base = lossless_budget(bits, snr, p).unwrap().symbol_use;
            proptest::prop_assert!(lossless_budget(bits, snr + ds, p).unwrap().symbol_use <= base);
            proptest::prop_assert!(lossless_budget(bits, snr, (p + dp).min(1.0)).unwrap().symbol_use <= base);
            proptest::prop_assert!(lossless_budget(bits + db, snr, p).unwrap().symbol_use >= base);
        }
    }

    #[test]
    fn rate_report_examples() {
        let r = rate_report(64, 8, 4, 8192, 0.0, 0.9).unwrap();
        assert_eq!(r.lossless_bits, 3136);
        assert_eq!(r.analog_symbols, 512);
        assert_eq!(r.lossless_symbols, lossless_budget(3136, 0.0, 0.9).unwrap().symbol_use);
        let r2 = rate_report(64, 8, 4, 16384, 0.0, 0.9).unwrap();
        assert!((r.bits_per_point / r2.bits_per_point - 2.0).abs() < 1e-12);
        assert!((r.bits_per_point - r.total_bits as f64 / 8192.0).abs() < 1e-15);
    }
}
