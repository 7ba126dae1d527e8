use mashvco::signal::{
    coherent_bin_frequency, decompose, metrics, sine_fit, spectrum, SampleStream, Window,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;

const FS: f64 = 3.5e9;

fn noise(seed: u64, sigma: f64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).unwrap();
    (0..n).map(|_| normal.sample(&mut rng)).collect()
}

fn sine(a: f64, f: f64, phase: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| a * (2.0 * PI * f * k as f64 / FS + phase).sin()).collect()
}

#[test]
fn white_noise_integrates_to_its_variance() {
    let sigma = 0.01;
    let n = 16384;
    for window in [Window::Rectangular, Window::Hann] {
        let s = SampleStream::new(noise(7, sigma, n), FS, "w").unwrap();
        let sp = spectrum(&s, n, 1, window).unwrap();
        // full-scale power units: a sine of amplitude 1 reads 1
        let expected = s.mean_square() / 0.5;
        let got = sp.integrated_power();
        assert!((got / expected - 1.0).abs() <= 0.05, "{window:?}: {got} vs {expected}");
        assert!((expected / (2.0 * sigma * sigma) - 1.0).abs() <= 0.05);
    }
}

#[test]
fn sine_plus_noise_at_minus_67_dbfs_reads_67_db() {
    let n = 131_072;
    let f = coherent_bin_frequency(26.5e6, FS, n);
    let sigma = (0.5 * 10f64.powf(-6.7)).sqrt();
    let x: Vec<f64> = sine(1.0, f, 0.3, n)
        .iter()
        .zip(noise(11, sigma, n))
        .map(|(s, e)| s + e)
        .collect();
    let s = SampleStream::new(x, FS, "x").unwrap();
    let m = metrics(&spectrum(&s, n, 1, Window::Hann).unwrap(), f, 1, 5).unwrap();
    assert!((m.sndr_db - 67.0).abs() <= 0.3, "sndr {}", m.sndr_db);
}

#[test]
fn noisy_sine_fit_amplitude_over_twenty_seeds() {
    let n = 131_072;
    let (a, f, phi, off) = (0.375, 26.5e6, 0.3, 0.45);
    let sigma = a / 2f64.sqrt() / 100.0;
    let clean: Vec<f64> = sine(a, f, phi, n).iter().map(|v| v + off).collect();
    let mut errs = Vec::new();
    for seed in 0..20 {
        let x: Vec<f64> = clean.iter().zip(noise(seed, sigma, n)).map(|(c, e)| c + e).collect();
        let fit = sine_fit(&SampleStream::new(x, FS, "x").unwrap(), f + 1.5 * FS / n as f64).unwrap();
        errs.push(fit.amplitude / a - 1.0);
    }
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!(mean.abs() <= 1e-4, "mean relative error {mean}");
    // single records sit within a few standard errors of sigma*sqrt(2/n)/a
    let se = sigma * (2.0 / n as f64).sqrt() / a;
    assert!(errs.iter().all(|e| e.abs() <= 4.0 * se), "{errs:?}");
}

#[test]
fn cubic_distortion_lands_in_dist_with_negligible_residue() {
    let n = 8192;
    let f = coherent_bin_frequency(26.5e6, FS, n);
    let x: Vec<f64> = sine(0.9, f, 0.2, n).iter().map(|v| v + 0.01 * v * v * v).collect();
    let s = SampleStream::new(x.clone(), FS, "y").unwrap();
    let fit = sine_fit(&s, f).unwrap();
    let d = decompose(&s, &fit, 5).unwrap();

    let third = 0.01 * 0.9f64.powi(3) / 4.0;
    let dist_rms = d.dist.mean_square().sqrt();
    assert!((dist_rms / (third / 2f64.sqrt()) - 1.0).abs() < 1e-3, "dist rms {dist_rms}");

    let r_dbfs = 10.0 * (d.noise.mean_square() / 0.5).log10();
    assert!(r_dbfs < -120.0, "residue {r_dbfs} dBFS");

    for k in 0..n {
        let sum = d.d_sig.samples[k] + d.dist.samples[k] + d.noise.samples[k];
        assert!((sum - x[k]).abs() <= 1e-9);
    }
}
