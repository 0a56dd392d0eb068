use critfield::field::{CovarianceKind, CovarianceModel, ScalarField, SpectralField};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn round_trip_is_lossless(
        seed in any::<u64>(),
        dim in 1usize..=3,
        k in 1usize..40,
        band_limited in any::<bool>(),
        ell in 0.2f64..3.0,
        periodic in any::<bool>(),
    ) {
        let kind = if band_limited { CovarianceKind::BandLimited } else { CovarianceKind::SquaredExponential };
        let model = CovarianceModel::new(kind, ell, dim).unwrap();
        let field = SpectralField::from_seed(&model, k, seed, periodic.then_some(7.5)).unwrap();
        let text = field.to_text();
        let back = SpectralField::from_text(&text).unwrap();
        prop_assert_eq!(back.to_text(), text);
        let t = [0.37, -2.1, 5.5];
        prop_assert_eq!(back.value(&t[..dim]).to_bits(), field.value(&t[..dim]).to_bits());
        prop_assert_eq!(back.seed(), Some(seed));
    }
}
