use std::f64::consts::PI;

use mashvco::calibration::{
    build_lut, CorrectionLUT, LutDiagnostics, NlModel, NlOrders, CODE_MAX, CODE_MIN,
};
use mashvco::mash::{ncf_combine, NcfGain};
use mashvco::signal::{decompose, metrics, sine_fit, spectrum, SampleStream, Window};
use proptest::prelude::*;

const ONE: f64 = (CODE_MAX + 1) as f64;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ncf_sum_telescopes(
        d1 in prop::collection::vec(-32i32..32, 2..200),
        seed in prop::collection::vec(-32i32..32, 200),
        g in 0.0f64..2.0,
    ) {
        let n = d1.len();
        let a = SampleStream::new(d1.iter().map(|&v| v as f64).collect(), 1.0, "a").unwrap();
        let b = SampleStream::new(seed[..n].iter().map(|&v| v as f64).collect(), 1.0, "b").unwrap();
        let d = ncf_combine(&a, &b, NcfGain { g }).unwrap();
        let lhs: f64 = d.samples.iter().sum();
        let rhs: f64 = a.samples.iter().sum::<f64>() + g * (b.samples[n - 1] - b.samples[0]);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
    }

    #[test]
    fn hex_tables_round_trip(table in prop::collection::vec(CODE_MIN..=CODE_MAX, 512)) {
        let t: Vec<i16> = table.iter().map(|&v| v as i16).collect();
        let text = CorrectionLUT::hex_table(&t);
        prop_assert_eq!(CorrectionLUT::parse_hex_table(&text).unwrap(), t);
    }

    #[test]
    fn lut_path_tracks_the_float_model(
        a2 in -0.01f64..0.01,
        a3 in -0.01f64..0.01,
        b3 in -0.01f64..0.01,
        amp in 0.1f64..0.95,
        w in 0.001f64..0.2,
    ) {
        let model = NlModel {
            orders: NlOrders { ni: 3, nj: 3, nk: 1 },
            a: vec![0.0, 0.0, a2, a3],
            b: vec![0.0, 0.0, b3],
            c: vec![1.0],
            offset: 0.0,
            scale: 1.0,
        };
        let lut = build_lut(&model).unwrap();
        let codes: Vec<i64> = (0..256).map(|k| (amp * (w * k as f64).sin() * ONE).round() as i64).collect();
        let mut diag = LutDiagnostics::default();
        let fixed = lut.correct_codes(&codes, &mut diag);
        let x: Vec<f64> = codes.iter().map(|&c| c as f64 / ONE).collect();
        let nl = model.eval_normalized(&x);
        for ((c, f), e) in codes.iter().zip(&fixed).zip(&nl) {
            let exact = *c as f64 - e * ONE;
            prop_assert!((*f as f64 - exact).abs() <= 3.0, "{} vs {}", f, exact);
        }
        prop_assert_eq!(diag, LutDiagnostics::default());
    }

    #[test]
    fn decomposition_reconstructs_the_input(
        amp in 0.1f64..1.0,
        cycles in 20u32..200,
        h2 in -0.01f64..0.01,
        h3 in -0.01f64..0.01,
        offset in -0.2f64..0.2,
    ) {
        let n = 4096;
        let w = 2.0 * PI * (2 * cycles + 1) as f64 / n as f64;
        let x: Vec<f64> = (0..n)
            .map(|k| {
                let p = w * k as f64 + 0.3;
                offset + amp * p.sin() + h2 * (2.0 * p).cos() + h3 * (3.0 * p).sin()
            })
            .collect();
        let s = SampleStream::new(x.clone(), 1.0e9, "x").unwrap();
        let f = w / (2.0 * PI) * 1.0e9;
        let d = decompose(&s, &sine_fit(&s, f).unwrap(), 5).unwrap();
        for k in 0..n {
            let sum = d.d_sig.samples[k] + d.dist.samples[k] + d.noise.samples[k];
            prop_assert!((sum - x[k]).abs() <= 1e-9);
            prop_assert!((d.d_cl.samples[k] - d.d_sig.samples[k] - d.dist.samples[k]).abs() <= 1e-9);
        }
        prop_assert!(d.noise.mean_square().sqrt() <= 1e-9);
    }

    #[test]
    fn metrics_ignore_common_scaling(scale in 1e-3f64..1e3, noise_seed in 0u64..1000) {
        let n = 2048;
        let w = 2.0 * PI * 41.0 / n as f64;
        let jitter = |k: usize| (((k as u64 + noise_seed) * 2654435761) % 1000) as f64 / 1e6;
        let x: Vec<f64> = (0..n).map(|k| 0.7 * (w * k as f64).sin() + jitter(k)).collect();
        let f = 41.0 / n as f64;
        let base = SampleStream::new(x.clone(), 1.0, "x").unwrap();
        let scaled = SampleStream::with_full_scale(
            x.iter().map(|v| v * scale).collect(), 1.0, "y", scale,
        ).unwrap();
        let m0 = metrics(&spectrum(&base, n, 1, Window::Hann).unwrap(), f, 4, 5).unwrap();
        let m1 = metrics(&spectrum(&scaled, n, 1, Window::Hann).unwrap(), f, 4, 5).unwrap();
        prop_assert!((m0.sndr_db - m1.sndr_db).abs() <= 1e-6);
        prop_assert!((m0.signal_dbfs - m1.signal_dbfs).abs() <= 1e-6);
    }
}
