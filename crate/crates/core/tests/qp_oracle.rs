//! The active-set solver against exhaustive enumeration of working sets.

mod common;

use common::{gram_plus_identity, DenseQp};
use nmpc_drive::qp::{solve_qp, ActiveSet, BoundStatus, QpProblem, QpStatus};
use nmpc_drive::sparse::CsrMatrix;
use proptest::prelude::*;

const N: usize = 4;
const M: usize = 2;

type Instance = DenseQp;

fn instance() -> impl Strategy<Value = Instance> {
    let mat = prop::collection::vec(prop::collection::vec(-1.0..1.0f64, N), N);
    let vec_n = prop::collection::vec(-3.0..3.0f64, N);
    let rows = prop::collection::vec(prop::collection::vec(-1.0..1.0f64, N), M);
    let widths = prop::collection::vec(0.2..2.0f64, N + M);
    let centers = prop::collection::vec(-0.5..0.5f64, N + M);
    let open = prop::collection::vec(0..4u8, N + M);
    (mat, vec_n, rows, widths, centers, open).prop_map(|(b, g, a, w, c, open)| {
        let h = gram_plus_identity(&b);
        // rows are centered on A x̄ for the box center x̄, which keeps x̄ feasible
        let center = |k: usize| {
            if k < M {
                (0..N).map(|j| a[k][j] * c[M + j]).sum::<f64>()
            } else {
                c[k]
            }
        };
        let side = |k: usize, lo: bool| {
            let v = if lo { center(k) - w[k] } else { center(k) + w[k] };
            match (open[k], lo) {
                (1, true) | (2, false) => if lo { f64::NEG_INFINITY } else { f64::INFINITY },
                _ => v,
            }
        };
        let lb_a = (0..M).map(|r| side(r, true)).collect();
        let ub_a = (0..M).map(|r| side(r, false)).collect();
        let lb_x = (0..N).map(|j| side(M + j, true)).collect();
        let ub_x = (0..N).map(|j| side(M + j, false)).collect();
        Instance { h, g, a, lb_a, ub_a, lb_x, ub_x }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_enumeration(inst in instance()) {
        let qp = inst.qp();
        let sol = solve_qp(&qp, None, 100).unwrap();
        // every box is non-empty around its center, so the instance is feasible
        let best = inst.objective(&inst.enumerate().expect("feasible instance"));
        prop_assert_eq!(sol.status, QpStatus::Solved);
        prop_assert!(inst.feasible(&sol.primal, 1e-8));
        let f = inst.objective(&sol.primal);
        prop_assert!((f - best).abs() <= 1e-8 * (1.0 + best.abs()), "solver {} oracle {}", f, best);
    }

    #[test]
    fn kkt_conditions_hold(inst in instance()) {
        let qp = inst.qp();
        let sol = solve_qp(&qp, None, 100).unwrap();
        prop_assert_eq!(sol.status, QpStatus::Solved);
        prop_assert!(qp.stationarity(&sol.primal, &sol.dual) < 1e-8);
        let ax = qp.a.mul_vec(&sol.primal);
        for r in 0..M {
            let lam = sol.dual[r];
            match sol.active_set.constraints[r] {
                BoundStatus::Inactive => prop_assert_eq!(lam, 0.0),
                BoundStatus::Upper => {
                    prop_assert!(lam >= -1e-9);
                    prop_assert!((ax[r] - qp.ub_a[r]).abs() < 1e-9);
                }
                BoundStatus::Lower => {
                    prop_assert!(lam <= 1e-9);
                    prop_assert!((ax[r] - qp.lb_a[r]).abs() < 1e-9);
                }
            }
        }
        for j in 0..N {
            let nu = sol.dual[M + j];
            match sol.active_set.bounds[j] {
                BoundStatus::Inactive => prop_assert_eq!(nu, 0.0),
                BoundStatus::Upper => prop_assert!(nu >= -1e-9 && sol.primal[j] == qp.ub_x[j]),
                BoundStatus::Lower => prop_assert!(nu <= 1e-9 && sol.primal[j] == qp.lb_x[j]),
            }
        }
    }

    #[test]
    fn warm_start_from_solution_needs_one_solve(inst in instance()) {
        let qp = inst.qp();
        let cold = solve_qp(&qp, None, 100).unwrap();
        let warm = solve_qp(&qp, Some(&cold.active_set), 100).unwrap();
        prop_assert_eq!(warm.iterations, 1);
        prop_assert_eq!(warm.active_set.changes_from(&cold.active_set), 0);
        for (a, b) in warm.primal.iter().zip(&cold.primal) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn warm_start_is_insensitive_to_junk(inst in instance(), junk in prop::collection::vec(0..3u8, N + M)) {
        let qp = inst.qp();
        let cold = solve_qp(&qp, None, 100).unwrap();
        let to_status = |v: u8| match v {
            0 => BoundStatus::Inactive,
            1 => BoundStatus::Lower,
            _ => BoundStatus::Upper,
        };
        let guess = ActiveSet {
            constraints: junk[..M].iter().map(|&v| to_status(v)).collect(),
            bounds: junk[M..].iter().map(|&v| to_status(v)).collect(),
        };
        let warm = solve_qp(&qp, Some(&guess), 100).unwrap();
        prop_assert_eq!(warm.status, QpStatus::Solved);
        let (fw, fc) = (inst.objective(&warm.primal), inst.objective(&cold.primal));
        prop_assert!((fw - fc).abs() <= 1e-8 * (1.0 + fc.abs()));
    }
}

#[test]
fn single_change_warm_start_costs_at_most_two_solves() {
    // min ½‖x‖² - x₀ with x₀ ≤ 0.5: the warm guess omits the one active bound
    let qp = QpProblem {
        h: CsrMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 1.0]]),
        g: vec![-1.0, 0.0],
        a: CsrMatrix::zeros(0, 2),
        lb_a: vec![],
        ub_a: vec![],
        lb_x: vec![f64::NEG_INFINITY; 2],
        ub_x: vec![0.5, f64::INFINITY],
    };
    let guess = ActiveSet::inactive(0, 2);
    let sol = solve_qp(&qp, Some(&guess), 100).unwrap();
    assert_eq!(sol.iterations, 2);
    assert_eq!(sol.primal, vec![0.5, 0.0]);
}

proptest! {
    #[test]
    fn unreachable_row_is_reported_infeasible(inst in instance(), row in 0..M) {
        let mut inst = inst;
        inst.lb_x = vec![-1.0; N];
        inst.ub_x = vec![1.0; N];
        // no point of the unit box reaches this level
        let reach: f64 = inst.a[row].iter().map(|v| v.abs()).sum();
        inst.lb_a[row] = reach + 0.5;
        inst.ub_a[row] = f64::INFINITY;
        let sol = solve_qp(&inst.qp(), None, 100).unwrap();
        prop_assert_eq!(sol.status, QpStatus::Infeasible);
    }
}
