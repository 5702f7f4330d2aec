//! Property tests for the file formats, the coherence estimator, and the
//! height inversion.

use num_complex::Complex32;
use proptest::prelude::*;

use cohnet_core::coherence::{estimate_coherence, volume_decorrelation, DecorrelationBudget, SlcPair};
use cohnet_core::io::{parse_raster, scalar_raster_bytes, complex_raster_bytes};
use cohnet_core::raster::{extract_patches, reassemble_patches, ComplexRaster, ScalarRaster};
use cohnet_core::rvog::{ambiguity_height, invert_height_sinc, sinc_magnitude, DEFAULT_TOL_M};

fn finite_f32() -> impl Strategy<Value = f32> {
    (-1e6f32..1e6f32).prop_map(|v| if v == -0.0 { 0.0 } else { v })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scalar_raster_file_round_trip(
        w in 1usize..24,
        h in 1usize..24,
        seed in any::<u64>(),
    ) {
        let n = w * h;
        let mut state = seed | 1;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 40) as f32 / 100.0 - 80.0
        };
        let data: Vec<f32> = (0..n).map(|_| next()).collect();
        let valid: Vec<bool> = (0..n).map(|i| i % 3 != 0).collect();
        let raster = ScalarRaster::new(w, h, data, valid).unwrap();
        let bytes = scalar_raster_bytes(&raster);
        let back = parse_raster(&bytes).unwrap().into_scalar().unwrap();
        prop_assert_eq!(back, raster);
    }

    #[test]
    fn complex_raster_file_round_trip(
        w in 1usize..16,
        h in 1usize..16,
        re in finite_f32(),
        im in finite_f32(),
    ) {
        let raster = ComplexRaster::filled(w, h, Complex32::new(re, im)).unwrap();
        let bytes = complex_raster_bytes(&raster);
        let back = parse_raster(&bytes).unwrap().into_complex().unwrap();
        prop_assert_eq!(back, raster);
    }

    #[test]
    fn coherence_magnitude_never_exceeds_one(
        seed in any::<u64>(),
        window in prop::sample::select(vec![3usize, 5, 7]),
    ) {
        let mut state = seed | 1;
        let mut next = || {
            state = state.wrapping_mul(2862933555777941757).wrapping_add(3037000493);
            (state >> 40) as f32 / 8388608.0 - 1.0
        };
        let n = 12 * 12;
        let s1: Vec<Complex32> = (0..n).map(|_| Complex32::new(next(), next())).collect();
        let s2: Vec<Complex32> = (0..n).map(|_| Complex32::new(next(), next())).collect();
        let pair = SlcPair::new(
            ComplexRaster::new(12, 12, s1, vec![true; n]).unwrap(),
            ComplexRaster::new(12, 12, s2, vec![true; n]).unwrap(),
        ).unwrap();
        let gamma = estimate_coherence(&pair, window).unwrap();
        for i in 0..n {
            if gamma.valid()[i] {
                prop_assert!(gamma.data()[i].norm() <= 1.0 + 1e-6);
            }
        }
    }

    #[test]
    fn budget_compensation_stays_in_unit_interval(
        mag in 0.0f64..1.0,
        phase in 0.0f64..std::f64::consts::TAU,
        snr in 0.05f64..1.0,
        rg in 0.5f64..1.0,
    ) {
        let gamma = ComplexRaster::filled(3, 3, Complex32::from_polar(mag as f32, phase as f32)).unwrap();
        let budget = DecorrelationBudget { gamma_snr: snr, gamma_rg: rg, ..Default::default() };
        let vol = volume_decorrelation(&gamma, &budget).unwrap();
        for &v in vol.data() {
            prop_assert!((0.0..=1.0).contains(&f64::from(v)));
        }
    }

    #[test]
    fn sinc_inversion_round_trips(
        frac in 0.01f64..0.95,
        kz in 0.05f64..0.2,
    ) {
        let hv = frac * ambiguity_height(kz);
        let gamma = sinc_magnitude(hv, kz).unwrap();
        let back = invert_height_sinc(gamma, kz, DEFAULT_TOL_M).unwrap();
        prop_assert!((back - hv).abs() <= 1.5e-3, "hv {} -> {} (kz {})", hv, back, kz);
    }

    #[test]
    fn patch_extract_reassemble_identity(
        w in 8usize..40,
        h in 8usize..40,
        patch in 4usize..8,
    ) {
        let n = w * h;
        let data: Vec<f32> = (0..n).map(|i| (i % 97) as f32 * 0.5).collect();
        let raster = ScalarRaster::new(w, h, data, vec![true; n]).unwrap();
        prop_assume!(w >= patch && h >= patch);
        let stride = patch.max(2) / 2;
        let (patches, grid) = extract_patches(&raster, patch, stride).unwrap();
        let back = reassemble_patches(&patches, &grid).unwrap();
        prop_assert_eq!(back, raster);
    }
}
