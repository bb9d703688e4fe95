use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate, relocate_empty, CvtResult, DiscreteProblem, GeneratorSet, Status, TraceEntry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LloydConfig {
    /// Stop once no generator is farther than this from its centroid (grid units).
    pub tol: f64,
    pub max_iter: usize,
    /// When set, stop on the scaled gradient test `max|g| < grad_tol * (1 + |E|)`
    /// instead of the movement test.
    pub grad_tol: Option<f64>,
    /// Seed for relocating empty generators.
    pub seed: u64,
}

impl Default for LloydConfig {
    fn default() -> Self {
        LloydConfig {
            tol: 1e-7,
            max_iter: 1000,
            grad_tol: None,
            seed: 0,
        }
    }
}

/// One fixed-point update: every generator moves to the weighted centroid of
/// its current cell; generators with empty cells are relocated onto a data site.
pub fn lloyd_step<R: Rng>(problem: &DiscreteProblem, gens: &GeneratorSet, rng: &mut R) -> GeneratorSet {
    let e = evaluate(problem, gens);
    let mut next = gens.clone();
    for i in 0..gens.k() {
        if let Some(c) = e.centroid(i) {
            next.positions[i] = c;
        }
    }
    relocate_empty(problem, &mut next, &e.empty(), rng);
    next
}

pub fn lloyd_solve(problem: &DiscreteProblem, init: &GeneratorSet, tol: f64, max_iter: usize) -> CvtResult {
    lloyd_solve_with(
        problem,
        init,
        &LloydConfig {
            tol,
            max_iter,
            ..LloydConfig::default()
        },
    )
}

pub fn lloyd_solve_with(problem: &DiscreteProblem, init: &GeneratorSet, config: &LloydConfig) -> CvtResult {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut gens = init.clone();
    let mut e = evaluate(problem, &gens);
    let mut trace = vec![TraceEntry {
        iter: 0,
        energy: e.energy,
        grad_norm: e.grad_max_norm(),
    }];
    let mut status = Status::MaxIterations;
    let mut iter = 0;
    loop {
        let done = !e.has_empty()
            && match config.grad_tol {
                Some(gt) => e.grad_max_norm() < gt * (1.0 + e.energy.abs()),
                None => {
                    let movement = (0..gens.k())
                        .filter_map(|i| {
                            e.centroid(i).map(|c| {
                                let p = gens.positions[i];
                                (c[0] - p[0]).hypot(c[1] - p[1])
                            })
                        })
                        .fold(0.0, f64::max);
                    movement < config.tol
                }
            };
        if done {
            status = Status::Converged;
            break;
        }
        if iter == config.max_iter {
            break;
        }
        iter += 1;
        gens = lloyd_step(problem, &gens, &mut rng);
        e = evaluate(problem, &gens);
        trace.push(TraceEntry {
            iter,
            energy: e.energy,
            grad_norm: e.grad_max_norm(),
        });
    }
    CvtResult {
        generators: gens,
        energy_trace: trace,
        status,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cvt::{energy, initial_generators, problem_on_grid, uniform_square, InitMode};
    use crate::grid::Grid;

    #[test]
    fn fixed_point_is_preserved() {
        let p = uniform_square(10, 1.0);
        let init = GeneratorSet::new(vec![[0.5, 0.5]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let next = lloyd_step(&p, &init, &mut rng);
        assert!((next.positions()[0][0] - 0.5).abs() < 1e-14);
        let r = lloyd_solve(&p, &next, 1e-7, 100);
        assert_eq!(r.status, Status::Converged);
        assert!(r.iterations() <= 1);
    }

    #[test]
    fn single_generator_jumps_to_centroid() {
        let grid = Grid::full(9, 7, 1.0).unwrap();
        let p = problem_on_grid(&grid, |x, y| 1.0 + (x * y) as f64).unwrap();
        let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
        for (q, w) in p.points().iter().zip(p.weights()) {
            sw += w;
            sx += w * q[0];
            sy += w * q[1];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let next = lloyd_step(&p, &GeneratorSet::new(vec![[-4.0, 30.0]]).unwrap(), &mut rng);
        assert!((next.positions()[0][0] - sx / sw).abs() < 1e-12);
        assert!((next.positions()[0][1] - sy / sw).abs() < 1e-12);
    }

    #[test]
    fn uniform_square_one_and_two_generators() {
        let p = uniform_square(40, 1.0);
        let r = lloyd_solve(&p, &GeneratorSet::new(vec![[0.1, 0.9]]).unwrap(), 1e-7, 1000);
        assert_eq!(r.status, Status::Converged);
        let c = r.generators.positions()[0];
        assert!((c[0] - 0.5).abs() < 1e-3 && (c[1] - 0.5).abs() < 1e-3);

        let r = lloyd_solve(
            &p,
            &GeneratorSet::new(vec![[0.2, 0.45], [0.7, 0.6]]).unwrap(),
            1e-7,
            1000,
        );
        assert_eq!(r.status, Status::Converged);
        let mut g = r.generators.positions().to_vec();
        g.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        let split_x = [[0.25, 0.5], [0.75, 0.5]];
        for (a, b) in g.iter().zip(split_x) {
            assert!((a[0] - b[0]).abs() < 1e-2 && (a[1] - b[1]).abs() < 1e-2, "{g:?}");
        }
    }

    #[test]
    fn monotone_on_random_instances() {
        let grid = Grid::full(20, 20, 1.0).unwrap();
        for seed in 0..100u64 {
            let p = problem_on_grid(&grid, |x, y| {
                1.0 + ((x as u64 * 31 + y as u64 * 17 + seed * 7) % 13) as f64
            })
            .unwrap();
            let mut g = initial_generators(&p, 5, InitMode::Uniform, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut e = energy(&p, &g);
            for _ in 0..5 {
                let next = lloyd_step(&p, &g, &mut rng);
                let en = energy(&p, &next);
                assert!(en <= e * (1.0 + 1e-12), "seed {seed}: {en} > {e}");
                let moved = next.positions() != g.positions();
                if moved {
                    assert!(en < e || (e - en).abs() <= 1e-12 * e);
                }
                g = next;
                e = en;
            }
        }
    }

    #[test]
    fn gradient_stop_rule() {
        let p = uniform_square(20, 1.0);
        let cfg = LloydConfig {
            grad_tol: Some(1e-10),
            ..LloydConfig::default()
        };
        let r = lloyd_solve_with(&p, &GeneratorSet::new(vec![[0.0, 0.0], [1.0, 0.2]]).unwrap(), &cfg);
        assert_eq!(r.status, Status::Converged);
        assert!(r.final_grad_norm() < 1e-10 * (1.0 + r.final_energy()));
    }
}
