use std::collections::BTreeMap;

use posetrack::model::{objective, validate, Edge, EdgeKind, ProblemGraph, Solution};
use posetrack::solver::{
    solve_best_of_seeds, solve_exact, solve_local_search, solve_local_search_logged, SolverParams,
};
use posetrack::synth::{random_instance, RandomInstanceConfig};
use proptest::prelude::*;

#[test]
fn local_search_matches_exact_on_small_instances() {
    let params = SolverParams::default();
    let mut hits = 0;
    let total = 200;
    for seed in 0..total {
        let g = random_instance(&RandomInstanceConfig {
            nodes: 2 + (seed as usize % 5),
            seed,
            ..Default::default()
        });
        let exact = solve_exact(&g, &params).unwrap();
        let local = solve_local_search(
            &g,
            &SolverParams {
                seed,
                ..params.clone()
            },
        )
        .unwrap();
        assert!(validate(&g, &exact).is_empty());
        assert!(validate(&g, &local).is_empty(), "seed {seed}");
        let (e, l) = (
            objective(&g, &exact).unwrap(),
            objective(&g, &local).unwrap(),
        );
        assert!(l >= e - 1e-9, "local search beat the oracle on seed {seed}");
        if l <= e + 1e-9 {
            hits += 1;
        } else {
            eprintln!(
                "seed {seed}: local {l} exact {e} ({} vs {})",
                local.encode(),
                exact.encode()
            );
        }
    }
    eprintln!("{hits}/{total}");
    assert!(hits * 10 >= total * 9, "{hits}/{total}");
}

#[test]
fn move_log_is_monotone_and_consistent() {
    for seed in 0..100 {
        let g = random_instance(&RandomInstanceConfig {
            nodes: 30,
            edge_probability: 0.2,
            seed,
            ..Default::default()
        });
        let (sol, log) = solve_local_search_logged(
            &g,
            &SolverParams {
                seed,
                ..Default::default()
            },
        )
        .unwrap();
        let mut cum = 0.0;
        for (_, d) in &log.moves {
            cum += d;
            assert!(cum <= 0.0);
        }
        let fin = objective(&g, &sol).unwrap();
        assert!((log.initial_objective + log.total_delta() - fin).abs() < 1e-9);
    }
}

/// Every simple cycle, as a list of edge indices, by brute-force DFS from
/// its smallest node.
fn simple_cycles(g: &ProblemGraph) -> Vec<Vec<usize>> {
    let n = g.num_nodes();
    let mut adj = vec![Vec::new(); n];
    for (k, e) in g.edges().iter().enumerate() {
        adj[e.u].push((e.v, k));
        adj[e.v].push((e.u, k));
    }
    let mut out = Vec::new();
    fn dfs(
        start: usize,
        v: usize,
        adj: &[Vec<(usize, usize)>],
        on_path: &mut Vec<bool>,
        path: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        for &(w, k) in &adj[v] {
            if w == start && path.len() >= 2 && path[0] < k {
                // each cycle once: first edge index below the closing one
                let mut c = path.clone();
                c.push(k);
                out.push(c);
            } else if w > start && !on_path[w] {
                on_path[w] = true;
                path.push(k);
                dfs(start, w, adj, on_path, path, out);
                path.pop();
                on_path[w] = false;
            }
        }
    }
    for s in 0..n {
        let mut on_path = vec![false; n];
        on_path[s] = true;
        dfs(s, s, &adj, &mut on_path, &mut Vec::new(), &mut out);
    }
    out
}

/// Violated inequalities among `y_vw <= x_v`, `y_vw <= x_w` and, for each
/// cycle `C` and edge `vw` on it, `x_v + x_w - 1 - y_vw <= sum over the rest
/// of C of (1 - y)`.
fn labeling_violations(g: &ProblemGraph, x: &[bool], y: &[bool]) -> usize {
    let mut bad = 0;
    for (k, e) in g.edges().iter().enumerate() {
        if y[k] && !(x[e.u] && x[e.v]) {
            bad += 1;
        }
    }
    for cycle in simple_cycles(g) {
        for &k in &cycle {
            let e = &g.edges()[k];
            let lhs = x[e.u] as i32 + x[e.v] as i32 - 1 - y[k] as i32;
            let rhs: i32 = cycle
                .iter()
                .filter(|&&j| j != k)
                .map(|&j| 1 - y[j] as i32)
                .sum();
            if lhs > rhs {
                bad += 1;
            }
        }
    }
    bad
}

fn cycle_violations(g: &ProblemGraph, sol: &Solution) -> usize {
    labeling_violations(g, &sol.node_labels(g), &sol.edge_labels(g))
}

#[test]
fn cycle_enumeration_finds_triangle_and_square() {
    let g = ProblemGraph::from_costs(
        vec![0.0; 4],
        vec![
            Edge::new(0, 1, EdgeKind::SameType, 0.0),
            Edge::new(1, 2, EdgeKind::SameType, 0.0),
            Edge::new(2, 3, EdgeKind::SameType, 0.0),
            Edge::new(3, 0, EdgeKind::SameType, 0.0),
            Edge::new(0, 2, EdgeKind::SameType, 0.0),
        ],
        [],
        [],
    )
    .unwrap();
    // two triangles and the outer square
    assert_eq!(simple_cycles(&g).len(), 3);
}

#[test]
fn checker_rejects_a_single_cut_on_a_triangle() {
    let g = ProblemGraph::from_costs(
        vec![0.0; 3],
        vec![
            Edge::new(0, 1, EdgeKind::SameType, 0.0),
            Edge::new(1, 2, EdgeKind::SameType, 0.0),
            Edge::new(0, 2, EdgeKind::SameType, 0.0),
        ],
        [],
        [],
    )
    .unwrap();
    assert_eq!(labeling_violations(&g, &[true; 3], &[true, true, false]), 1);
    assert_eq!(
        labeling_violations(&g, &[true, true, false], &[true, false, false]),
        0
    );
    assert_eq!(
        labeling_violations(&g, &[true, true, false], &[true, true, false]),
        1
    );
    assert_eq!(
        cycle_violations(&g, &Solution::from_clusters([vec![0, 1], vec![2]])),
        0
    );
}

#[test]
fn solver_outputs_satisfy_enumerated_cycle_inequalities() {
    for seed in 0..300u64 {
        let g = random_instance(&RandomInstanceConfig {
            nodes: 3 + (seed as usize % 6),
            edge_probability: 0.6,
            seed,
            ..Default::default()
        });
        let params = SolverParams {
            seed,
            ..Default::default()
        };
        for sol in [
            solve_exact(&g, &params).unwrap(),
            solve_local_search(&g, &params).unwrap(),
        ] {
            assert_eq!(cycle_violations(&g, &sol), 0, "seed {seed}");
        }
    }
}

proptest! {
    #[test]
    fn any_partition_satisfies_cycle_inequalities(
        seed in 0u64..10_000,
        nodes in 2usize..=8,
        raw in proptest::collection::vec(proptest::option::of(0usize..4), 8),
    ) {
        let g = random_instance(&RandomInstanceConfig {
            nodes,
            edge_probability: 0.7,
            constrained_fraction: 0.0,
            seed,
            ..Default::default()
        });
        let assignment: BTreeMap<usize, usize> = raw
            .iter()
            .take(nodes)
            .enumerate()
            .filter_map(|(v, c)| c.map(|c| (v, c)))
            .collect();
        let sol = Solution::from_assignment(assignment);
        prop_assert_eq!(cycle_violations(&g, &sol), 0);
    }

    #[test]
    fn objective_ignores_cluster_relabeling(
        seed in 0u64..10_000,
        shift in 1usize..50,
    ) {
        let g = random_instance(&RandomInstanceConfig { nodes: 8, seed, ..Default::default() });
        let sol = solve_local_search(&g, &SolverParams { seed, ..Default::default() }).unwrap();
        let relabeled = Solution::from_assignment(
            sol.assignment().iter().map(|(&v, &c)| (v, 1000 - c * shift)).collect(),
        );
        prop_assert!((objective(&g, &sol).unwrap() - objective(&g, &relabeled).unwrap()).abs() < 1e-12);
        prop_assert_eq!(sol.canonical(), relabeled.canonical());
    }
}

#[test]
fn best_of_seeds_is_feasible_and_no_worse_than_one_seed() {
    for seed in 0..20u64 {
        let g = random_instance(&RandomInstanceConfig {
            nodes: 40,
            edge_probability: 0.15,
            seed,
            ..Default::default()
        });
        let params = SolverParams {
            seed,
            ..Default::default()
        };
        let one = solve_local_search(&g, &params).unwrap();
        let best = solve_best_of_seeds(&g, &params, &[seed, seed + 1, seed + 2, seed + 3]).unwrap();
        assert!(validate(&g, &best).is_empty());
        assert!(objective(&g, &best).unwrap() <= objective(&g, &one).unwrap() + 1e-9);
    }
}

#[test]
fn solving_is_deterministic_per_seed() {
    let g = random_instance(&RandomInstanceConfig {
        nodes: 60,
        edge_probability: 0.1,
        seed: 7,
        ..Default::default()
    });
    let params = SolverParams {
        seed: 3,
        ..Default::default()
    };
    let a = solve_local_search(&g, &params).unwrap();
    let b = solve_local_search(&g, &params).unwrap();
    assert_eq!(a.encode(), b.encode());
}
