//! Property tests over randomized inputs: quadrature exactness on arbitrary
//! polynomials, symbolic polynomial calculus, basis combinatorics, and
//! metric axioms.

use proptest::prelude::*;

use projfilter::baselines::{particle_update, GaussianBelief};
use projfilter::expfam::build_basis;
use projfilter::metrics::{density_to_grid, hellinger, histogram_to_grid, kl, Region};
use projfilter::nalgebra::{DMatrix, DVector};
use projfilter::posterior::LikelihoodModel;
use projfilter::propagate::Polynomial;
use projfilter::quadrature::gauss_patterson_1d;

fn binomial(n: u64, k: u64) -> u64 {
    let mut r = 1u64;
    for i in 0..k.min(n - k) {
        r = r * (n - i) / (i + 1);
    }
    r
}

proptest! {
    #[test]
    fn quadrature_integrates_random_polynomials_exactly(
        level in 2u32..=7,
        coeffs in proptest::collection::vec(-3.0f64..3.0, 1..12),
    ) {
        let rule = gauss_patterson_1d(level).unwrap();
        prop_assume!(coeffs.len() as u32 <= rule.exactness_degree() + 1);
        let poly = |x: f64| -> f64 {
            coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
        };
        let got: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(x, w)| w * poly(*x))
            .sum();
        let want: f64 = coeffs
            .iter()
            .enumerate()
            .map(|(j, c)| {
                if j % 2 == 0 { 2.0 * c / (j as f64 + 1.0) } else { 0.0 }
            })
            .sum();
        let scale = coeffs.iter().map(|c| c.abs()).sum::<f64>().max(1e-12);
        prop_assert!((got - want).abs() <= 1e-12 * scale);
    }

    #[test]
    fn polynomial_derivative_obeys_the_product_rule(
        ea in proptest::collection::vec(0u32..4, 2),
        eb in proptest::collection::vec(0u32..4, 2),
        ca in -2.0f64..2.0,
        cb in -2.0f64..2.0,
        x in -1.5f64..1.5,
        y in -1.5f64..1.5,
        axis in 0usize..2,
    ) {
        let p = Polynomial::monomial(&ea, ca);
        let q = Polynomial::monomial(&eb, cb);
        let lhs = p.mul(&q).derivative(axis);
        let mut rhs = p.derivative(axis).mul(&q);
        rhs.add_assign(&p.mul(&q.derivative(axis)));
        let at = [x, y];
        prop_assert!((lhs.eval(&at) - rhs.eval(&at)).abs() < 1e-10);
    }

    #[test]
    fn basis_count_is_binomial(dim in 1usize..=3, order in 2u32..=6) {
        let basis = build_basis(dim, order).unwrap();
        let want = binomial((order as u64) + dim as u64, dim as u64) - 1;
        prop_assert_eq!(basis.len() as u64, want);
        // indices are distinct and graded
        let mut seen = std::collections::BTreeSet::new();
        let mut last_grade = 0u32;
        for idx in basis.indices() {
            prop_assert!(seen.insert(idx.clone()));
            let grade: u32 = idx.iter().sum();
            prop_assert!(grade >= 1 && grade >= last_grade && grade <= order);
            last_grade = grade;
        }
    }

    #[test]
    fn hellinger_axioms_on_random_histograms(
        seed_a in 0u64..500,
        seed_b in 500u64..1000,
        mu in -0.5f64..0.5,
    ) {
        let belief_a = GaussianBelief::new(
            DVector::from_vec(vec![mu, 0.0]),
            DMatrix::identity(2, 2),
        ).unwrap();
        let belief_b = GaussianBelief::new(
            DVector::from_vec(vec![-mu, 0.1]),
            DMatrix::identity(2, 2) * 1.3,
        ).unwrap();
        let flat = || LikelihoodModel::custom(Box::new(|_: &[f64], _: &[f64]| 0.0));
        let pa = particle_update(&belief_a, &flat(), &[], 4000, seed_a).unwrap();
        let pb = particle_update(&belief_b, &flat(), &[], 4000, seed_b).unwrap();
        let region = Region::new(vec![-7.0, -7.0], vec![7.0, 7.0]).unwrap();
        let (ga, _) = histogram_to_grid(&pa, &region, 40).unwrap();
        let (gb, _) = histogram_to_grid(&pb, &region, 40).unwrap();
        let h_ab = hellinger(&ga, &gb).unwrap();
        let h_ba = hellinger(&gb, &ga).unwrap();
        prop_assert!((0.0..=1.0).contains(&h_ab));
        prop_assert_eq!(h_ab.to_bits(), h_ba.to_bits());
        prop_assert_eq!(hellinger(&ga, &ga).unwrap(), 0.0);
    }

    #[test]
    fn kl_nonnegative_on_normalized_grids(
        mu in -1.0f64..1.0,
        var in 0.5f64..2.0,
    ) {
        let basis = build_basis(1, 2).unwrap();
        let region = Region::new(vec![-10.0], vec![10.0]).unwrap();
        let ta = projfilter::expfam::gaussian_to_natural(
            &basis,
            &DVector::from_element(1, mu),
            &DMatrix::from_element(1, 1, var),
        ).unwrap();
        let tb = projfilter::expfam::gaussian_to_natural(
            &basis,
            &DVector::from_element(1, -0.3 * mu),
            &DMatrix::from_element(1, 1, 1.1),
        ).unwrap();
        let ga = density_to_grid(&basis, &ta, &region, 600).unwrap();
        let gb = density_to_grid(&basis, &tb, &region, 600).unwrap();
        let r = kl(&ga, &gb).unwrap();
        prop_assert!(r.value >= -1e-10);
    }
}
