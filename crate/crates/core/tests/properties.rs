use proptest::prelude::*;

use sincfb::analysis::{cumulative_frequency_response, filter_census};
use sincfb::autodiff::clamp_backward;
use sincfb::filter::{assemble_filter, ideal_band_taps, normalize_cutoffs};
use sincfb::init::{cfr_to_pmf, init_formant, init_mel, init_uniform, mel_edges, TabulatedCurve};
use sincfb::io::Checkpoint;
use sincfb::pipeline::{decode_transposed, encode, encode_with_taps, frame_count, softmax};
use sincfb::{BandParams, DecoderVariant, Filterbank, Mode, Model, NormalizedBand, RawCutoffPair};

fn any_raw() -> impl Strategy<Value = f64> {
    prop_oneof![
        Just(0.0),
        Just(1.0),
        Just(-1.0),
        Just(1e9),
        Just(-1e9),
        Just(1e-12),
        -3.0f64..3.0,
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
    ]
}

fn band() -> impl Strategy<Value = (f64, f64)> {
    (0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, b)| (a.min(b), a.max(b)))
}

fn bank(bands: &[(f64, f64)], betas: &[f64], len: usize) -> Filterbank {
    let params =
        bands.iter().zip(betas).map(|(&(a1, a2), &beta)| BandParams { a1_raw: a1, a2_raw: a2, beta }).collect();
    Filterbank::new(16000, len, Mode::Reformed, params).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn clamp_output_is_ordered_and_bounded(r1 in any_raw(), r2 in any_raw()) {
        let b = normalize_cutoffs(RawCutoffPair::new(r1, r2)).unwrap();
        prop_assert!(0.0 <= b.a1 && b.a1 <= b.a2 && b.a2 <= 1.0);
    }

    #[test]
    fn clamp_ignores_swap_and_sign(r1 in any_raw(), r2 in any_raw()) {
        let base = normalize_cutoffs(RawCutoffPair::new(r1, r2)).unwrap();
        for (a, b) in [(r2, r1), (-r1, r2), (r1, -r2), (-r2, -r1)] {
            prop_assert_eq!(normalize_cutoffs(RawCutoffPair::new(a, b)).unwrap(), base);
        }
    }

    #[test]
    fn assembled_taps_are_exactly_symmetric(
        r1 in -1.5f64..1.5, r2 in -1.5f64..1.5, beta in 0.0f64..4.0, half in 1usize..200,
        original in any::<bool>(),
    ) {
        let len = 2 * half + 1;
        let mode = if original { Mode::Original } else { Mode::Reformed };
        let f = assemble_filter(RawCutoffPair::new(r1, r2), beta, len, mode).unwrap();
        for k in 1..=half {
            prop_assert_eq!(f.taps[half + k], f.taps[half - k]);
        }
    }

    #[test]
    fn center_tap_is_band_width((a1, a2) in band(), half in 1usize..200) {
        let taps = ideal_band_taps(NormalizedBand::new(a1, a2).unwrap(), 2 * half + 1).unwrap();
        prop_assert!((taps[half] - (a2 - a1)).abs() < 1e-15);
    }

    #[test]
    fn zero_width_band_has_zero_taps(a in 0.0f64..1.0, half in 1usize..100) {
        let f = assemble_filter(RawCutoffPair::new(a, a), 1.0, 2 * half + 1, Mode::Reformed).unwrap();
        prop_assert!(f.taps.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn clamp_routing_touches_one_path(r1 in 0.01f64..0.99, r2 in 0.01f64..0.99, g1 in -1.0f64..1.0, g2 in -1.0f64..1.0) {
        prop_assume!((r1 - r2).abs() > 1e-9);
        // only the upstream of the edge a raw value lands on reaches it
        let (d1, d2) = clamp_backward(RawCutoffPair::new(r1, r2), (g1, g2));
        if r1 < r2 {
            prop_assert_eq!((d1, d2), (g1, g2));
        } else {
            prop_assert_eq!((d1, d2), (g2, g1));
        }
    }

    #[test]
    fn encode_is_linear(
        seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0, hop in 1usize..8,
        bands in prop::collection::vec(band(), 1..5),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let fb = bank(&bands, &vec![1.0; bands.len()], 31);
        let x: Vec<f64> = (0..150).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..150).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let (ex, ey, em) = (encode(&x, &fb, hop).unwrap(), encode(&y, &fb, hop).unwrap(), encode(&mix, &fb, hop).unwrap());
        let scale = em.data().iter().map(|v| v.abs()).fold(1e-12, f64::max);
        for k in 0..em.data().len() {
            let lin = a * ex.data()[k] + b * ey.data()[k];
            prop_assert!((em.data()[k] - lin).abs() / scale < 1e-10);
        }
    }

    #[test]
    fn frame_shape_law(half in 1usize..40, hop in 1usize..50, extra in 0usize..300) {
        let l = 2 * half + 1;
        let t = l + extra;
        let fm = encode_with_taps(&vec![0.5; t], &[vec![0.1; l]], hop).unwrap();
        prop_assert_eq!(fm.frames(), (t - l) / hop + 1);
        prop_assert_eq!(fm.frames(), frame_count(t, l, hop));
    }

    #[test]
    fn transposed_decoder_is_adjoint(seed in any::<u64>(), hop in 1usize..40, bands in prop::collection::vec(band(), 1..4)) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let fb = bank(&bands, &vec![1.3; bands.len()], 21);
        let x: Vec<f64> = (0..120).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fx = encode(&x, &fb, hop).unwrap();
        let y = fx.with_data((0..fx.data().len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let lhs: f64 = fx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let back = decode_transposed(&y, &fb.taps()).unwrap();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs().max(rhs.abs()).max(1e-12));
    }

    #[test]
    fn softmax_is_a_distribution(gamma in prop::collection::vec(-700.0f64..700.0, 1..50)) {
        let w = softmax(&gamma);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn init_strategies_land_in_unit_interval(n in 1usize..64, seed in any::<u64>(), f_min in 0.0f64..7000.0) {
        let fs = 16000.0;
        let pmf = cfr_to_pmf(&TabulatedCurve::synthetic_formant(fs), 64, fs).unwrap();
        for pairs in [init_uniform(n, seed).unwrap(), init_formant(n, &pmf, fs, seed).unwrap(), init_mel(n, fs, f_min).unwrap()] {
            prop_assert_eq!(pairs.len(), n);
            for p in pairs {
                prop_assert!((0.0..=1.0).contains(&p.a1_raw) && (0.0..=1.0).contains(&p.a2_raw));
            }
        }
        prop_assert_eq!(init_uniform(n, seed).unwrap(), init_uniform(n, seed).unwrap());
        prop_assert_eq!(init_formant(n, &pmf, fs, seed).unwrap(), init_formant(n, &pmf, fs, seed).unwrap());
    }

    #[test]
    fn mel_edges_ascend_with_widening_steps(n in 2usize..120, f_min in 0.0f64..4000.0) {
        let e = mel_edges(n, 16000.0, f_min).unwrap();
        prop_assert_eq!(e[0], f_min);
        prop_assert_eq!(e[n], 8000.0);
        prop_assert!(e.windows(2).all(|w| w[0] < w[1]));
        let steps: Vec<f64> = e.windows(2).map(|w| w[1] - w[0]).collect();
        prop_assert!(steps.windows(2).all(|s| s[1] > s[0] * (1.0 - 1e-9)));
    }

    #[test]
    fn cfr_is_additive_and_scales(a in prop::collection::vec(band(), 1..4), b in prop::collection::vec(band(), 1..4), k in 0.0f64..5.0) {
        let ones = |v: &Vec<(f64, f64)>| vec![1.0; v.len()];
        let union: Vec<_> = a.iter().chain(&b).copied().collect();
        let ca = cumulative_frequency_response(&bank(&a, &ones(&a), 41), 64).unwrap();
        let cb = cumulative_frequency_response(&bank(&b, &ones(&b), 41), 64).unwrap();
        let cu = cumulative_frequency_response(&bank(&union, &ones(&union), 41), 64).unwrap();
        let ck = cumulative_frequency_response(&bank(&a, &vec![k; a.len()], 41), 64).unwrap();
        for i in 0..64 {
            prop_assert!((ca.magnitude[i] + cb.magnitude[i] - cu.magnitude[i]).abs() < 1e-12);
            prop_assert!((k * ca.magnitude[i] - ck.magnitude[i]).abs() < 1e-12 * (1.0 + k));
        }
    }

    #[test]
    fn census_partitions_the_bank(bands in prop::collection::vec(band(), 1..40), eps in 0.001f64..0.4) {
        let fb = bank(&bands, &vec![1.0; bands.len()], 21);
        prop_assert_eq!(filter_census(&fb, eps).total(), bands.len());
    }

    #[test]
    fn checkpoint_bytes_round_trip(bands in prop::collection::vec(band(), 1..6), logits in -5.0f64..5.0, hop in 1usize..5) {
        let fb = bank(&bands, &vec![0.75; bands.len()], 15);
        let mut model = Model::new(fb, DecoderVariant::Transposed, hop, hop % 2 == 0).unwrap();
        model.mask_logits.iter_mut().enumerate().for_each(|(i, t)| *t = logits / (i + 1) as f64);
        let text = Checkpoint::new(model).to_json().unwrap();
        let back = Checkpoint::from_json(&text).unwrap();
        prop_assert_eq!(back.to_json().unwrap(), text);
    }
}
