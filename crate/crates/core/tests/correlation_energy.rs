mod common;

use gauge_cvt::cvt::{correlation_energy, GeneratorSet};
use gauge_cvt::grf::GrfSampler;
use gauge_cvt::grid::{Grid, ObservationMatrix};
use gauge_cvt::variogram::ExponentialNugget;
use gauge_cvt::Error;

use common::{correlation_energy_brute, half_correlated};

#[test]
fn matches_brute_force_on_grf() {
    let grid = Grid::full(15, 15, 1.0).unwrap();
    let model = ExponentialNugget::new(0.95, 5.0, 1.2).unwrap();
    let obs = GrfSampler::new(&grid, &model).unwrap().sample(200, 8).unwrap();
    let gens = GeneratorSet::new(vec![[3.2, 4.1], [11.7, 2.2], [7.5, 7.5], [1.0, 14.0]]).unwrap();
    let got = correlation_energy(&obs, &gens, 2.0).unwrap();
    let want = correlation_energy_brute(&obs, &gens, 2.0);
    assert!((got - want).abs() <= 1e-9 * want, "{got} vs {want}");
}

#[test]
fn constant_correlation_closed_form() {
    let obs = half_correlated(Grid::full(6, 5, 1.0).unwrap());
    for (k, eps) in [(1usize, 1.0), (3, 0.5), (5, 2.0)] {
        let gens = GeneratorSet::new((0..k).map(|i| [i as f64 + 0.5, 0.5 + i as f64 % 5.0]).collect()).unwrap();
        let got = correlation_energy(&obs, &gens, eps).unwrap();
        assert_eq!(got, 2.0 * eps * eps * 0.5 * (30 - k) as f64);
    }
}

#[test]
fn energy_scales_with_epsilon_squared() {
    let obs = half_correlated(Grid::full(4, 4, 1.0).unwrap());
    let gens = GeneratorSet::new(vec![[0.5, 0.5], [3.5, 3.5]]).unwrap();
    let a = correlation_energy(&obs, &gens, 1.0).unwrap();
    let b = correlation_energy(&obs, &gens, 3.0).unwrap();
    assert_eq!(b, 9.0 * a);
}

#[test]
fn constant_non_host_cell_is_named() {
    let grid = Grid::full(3, 3, 1.0).unwrap();
    let mut values: Vec<f64> = (0..9 * 6).map(|i| ((i * 31) % 13) as f64).collect();
    for t in 0..6 {
        values[8 * 6 + t] = 1.0;
    }
    let obs = ObservationMatrix::from_cell_major(grid, 6, values).unwrap();
    let err = correlation_energy(&obs, &GeneratorSet::new(vec![[0.5, 0.5]]).unwrap(), 1.0).unwrap_err();
    assert!(matches!(err, Error::DegenerateSeries(_)));
    assert!(err.to_string().contains("(2, 2)"), "{err}");
}
