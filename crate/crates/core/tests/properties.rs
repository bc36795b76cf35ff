use std::f64::consts::PI;

use mkid_core::io::to_json_string;
use mkid_core::iqcal::{asymmetry_distort, asymmetry_rotation, ellipse_to_circle, fit_circle, EllipseParams};
use mkid_core::numeric::wrap_angle;
use mkid_core::optfilter::{build_filter, dft, estimate_amplitude, idft};
use mkid_core::physics::{delta_to_tc, mattis_bardeen};
use mkid_core::pulse::{moving_average, savgol_coefficients, savgol_filter, SavGolConfig};
use mkid_core::resonance::{q_internal, s21_ideal};
use mkid_core::spectrum::{bin_integral, SpectrumModel};
use num_complex::Complex64;
use proptest::prelude::*;

fn complex() -> impl Strategy<Value = Complex64> {
    (-3.0..3.0f64, -3.0..3.0f64).prop_map(|(re, im)| Complex64::new(re, im))
}

fn ellipse() -> impl Strategy<Value = EllipseParams> {
    (-1.0..1.0f64, -1.0..1.0f64, 0.2..3.0f64, 0.2..3.0f64, 0.3..2.8f64).prop_map(|(i0, q0, a_i, a_q, gamma)| {
        EllipseParams { i0, q0, a_i, a_q, gamma }
    })
}

proptest! {
    #[test]
    fn asymmetry_pair_is_inverse(z in complex(), theta in -1.5..1.5f64) {
        let back = asymmetry_distort(asymmetry_rotation(z, theta), theta);
        prop_assert!((back - z).norm() < 1e-9 * (1.0 + z.norm()));
    }

    #[test]
    fn asymmetry_fixes_unity(theta in -1.5..1.5f64) {
        prop_assert!((asymmetry_rotation(Complex64::new(1.0, 0.0), theta) - 1.0).norm() < 1e-15);
    }

    #[test]
    fn ellipse_map_inverts_distortion(e in ellipse(), z in complex()) {
        let back = ellipse_to_circle(e.distort(z), &e);
        prop_assert!((back - z).norm() < 1e-9 * (1.0 + z.norm()));
    }

    #[test]
    fn ellipse_points_land_on_unit_circle(e in ellipse(), t in 0.0..(2.0 * PI)) {
        prop_assert!((ellipse_to_circle(e.parametric(t), &e).norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn circle_fit_recovers_exact_arcs(
        c in complex(), r in 0.01..5.0f64, start in -PI..PI, span in 1.0..6.0f64,
    ) {
        let pts: Vec<Complex64> = (0..50)
            .map(|k| c + Complex64::from_polar(r, start + span * k as f64 / 49.0))
            .collect();
        let fit = fit_circle(&pts).unwrap();
        prop_assert!((fit.center - c).norm() < 1e-7 * (1.0 + r));
        prop_assert!(((fit.radius - r) / r).abs() < 1e-7);
    }

    #[test]
    fn quality_factors_are_consistent(q in 100.0..1e5f64, ratio in 1.01..100.0f64) {
        let qc = q * ratio;
        let qi = q_internal(q, qc).unwrap();
        prop_assert!((1.0 / q - 1.0 / qc - 1.0 / qi).abs() < 1e-12 / q);
        let dip = s21_ideal(5e9, 5e9, q, qc).unwrap();
        prop_assert!((dip - Complex64::new(1.0 - q / qc, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn tc_scales_linearly(delta in 1e-6..1e-2f64, k in 0.1..10.0f64) {
        let a = delta_to_tc(delta).unwrap();
        let b = delta_to_tc(k * delta).unwrap();
        prop_assert!((b / a - k).abs() < 1e-12 * k);
    }

    #[test]
    fn conductivity_ratios_positive(t in 0.02..0.3f64, f in 1e9..1e10f64) {
        let r = mattis_bardeen(t, 2.0 * PI * f, 1.5e-4, 1.5e-4).unwrap();
        prop_assert!(r.sigma1_over_sigman > 0.0);
        prop_assert!(r.sigma2_over_sigman > 0.0);
        prop_assert!(r.sigma1_over_sigman.is_finite() && r.sigma2_over_sigman.is_finite());
    }

    #[test]
    fn savgol_reproduces_polynomials(
        half in 2usize..15, order in 0usize..5, coeffs in prop::collection::vec(-2.0..2.0f64, 5),
    ) {
        let window = 2 * half + 1;
        prop_assume!(order < window);
        let degree = order;
        let xs: Vec<f64> = (0..120).map(|k| k as f64 * 0.05 - 3.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (0..=degree).map(|j| coeffs[j] * x.powi(j as i32)).sum()).collect();
        let cfg = SavGolConfig { window, poly_order: order, deriv_order: 0 };
        let out = savgol_filter(&ys, &cfg).unwrap();
        for (o, y) in out.iter().zip(&ys) {
            prop_assert!((o - y).abs() < 1e-9 * (1.0 + y.abs()), "{o} vs {y}");
        }
    }

    #[test]
    fn savgol_smoothing_weights_sum_to_one(half in 2usize..30, order in 0usize..6) {
        let cfg = SavGolConfig { window: 2 * half + 1, poly_order: order, deriv_order: 0 };
        prop_assume!(cfg.validate().is_ok());
        let w = savgol_coefficients(&cfg).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        for k in 0..w.len() {
            prop_assert!((w[k] - w[w.len() - 1 - k]).abs() < 1e-10);
        }
    }

    #[test]
    fn moving_average_keeps_constants(c in -5.0..5.0f64, n in 41usize..200, half in 0usize..20) {
        let window = 2 * half + 1;
        let out = moving_average(&vec![c; n], window).unwrap();
        prop_assert!(out.iter().all(|v| (v - c).abs() < 1e-12));
    }

    #[test]
    fn dft_round_trip(xs in prop::collection::vec(-10.0..10.0f64, 1..300)) {
        let back = idft(&dft(&xs));
        for (b, x) in back.iter().zip(&xs) {
            prop_assert!((b.re - x).abs() < 1e-10 && b.im.abs() < 1e-10);
        }
    }

    #[test]
    fn optimum_filter_is_linear(a in -5.0..5.0f64, tau in 5.0..50.0f64) {
        let n = 256;
        let template: Vec<f64> = (0..n)
            .map(|k| if k < 40 { 0.0 } else { (-(k as f64 - 40.0) / tau).exp() })
            .collect();
        let psd: Vec<f64> = (0..=n / 2).map(|k| 1.0 + 10.0 / (k as f64 + 1.0)).collect();
        let model = build_filter(&template, &psd, 40).unwrap();
        let scaled: Vec<f64> = model.template.iter().map(|v| a * v).collect();
        prop_assert!((estimate_amplitude(&scaled, &model).unwrap() - a).abs() < 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn spectrum_bins_partition_probability(
        mu in 0.1..30.0f64, sigma in 1e-3..0.1f64, e in 5e-3..0.2f64, shift in 0.0..1.0f64, amp in 0.1..10.0f64,
    ) {
        let m = SpectrumModel::new(mu, sigma, amp, shift, e).unwrap();
        let lo = shift - 20.0 * sigma;
        let hi = shift + e * (mu + 12.0 * mu.sqrt() + 12.0) + 20.0 * sigma;
        let mid = 0.5 * (lo + hi);
        let whole = bin_integral(lo, hi, &m);
        let split = bin_integral(lo, mid, &m) + bin_integral(mid, hi, &m);
        prop_assert!((whole - split).abs() < 1e-9 * amp);
        prop_assert!(((whole - amp) / amp).abs() < 1e-6, "whole {whole} amp {amp}");
    }

    #[test]
    fn wrapped_angles_stay_in_range(a in -1e3..1e3f64) {
        let w = wrap_angle(a);
        prop_assert!(w > -PI - 1e-12 && w <= PI + 1e-12);
        prop_assert!(((a - w) / (2.0 * PI)).fract().abs() < 1e-9 || ((a - w) / (2.0 * PI)).fract().abs() > 1.0 - 1e-9);
    }

    #[test]
    fn json_floats_round_trip(v in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL) {
        let text = to_json_string(&v);
        let back: f64 = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back.to_bits(), v.to_bits());
    }
}

#[test]
fn smoothing_weights_window5_order2() {
    let w = savgol_coefficients(&SavGolConfig {
        window: 5,
        poly_order: 2,
        deriv_order: 0,
    })
    .unwrap();
    let oracle = [-3.0, 12.0, 17.0, 12.0, -3.0].map(|v| v / 35.0);
    for (a, b) in w.iter().zip(oracle) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn second_derivative_weights_window5() {
    // d²/dx² weights for window 5, order 2: (2, -1, -2, -1, 2)/7
    let w = savgol_coefficients(&SavGolConfig {
        window: 5,
        poly_order: 2,
        deriv_order: 2,
    })
    .unwrap();
    let oracle = [2.0, -1.0, -2.0, -1.0, 2.0].map(|v| v / 7.0);
    for (a, b) in w.iter().zip(oracle) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}
