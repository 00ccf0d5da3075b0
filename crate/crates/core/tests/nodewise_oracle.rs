use orchsim_core::topology::{solve_hosting, ClusterTopology, VolumeMatrix, DEFAULT_SEARCH_BUDGET};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Max node egress of `hosting`, computed straight from the volume rows.
fn egress_of(rows: &[Vec<u64>], c: usize, hosting: &[usize]) -> u64 {
    let nodes = rows.len() / c;
    let mut egress = vec![0u64; nodes];
    for (i, row) in rows.iter().enumerate() {
        for (b, &v) in row.iter().enumerate() {
            if hosting[b] != i / c {
                egress[i / c] += v;
            }
        }
    }
    egress.into_iter().max().unwrap_or(0)
}

fn best_hosting(rows: &[Vec<u64>], c: usize) -> u64 {
    fn go(rows: &[Vec<u64>], c: usize, h: &mut Vec<usize>, load: &mut [usize], best: &mut u64) {
        if h.len() == rows.len() {
            *best = (*best).min(egress_of(rows, c, h));
            return;
        }
        for n in 0..load.len() {
            if load[n] < c {
                load[n] += 1;
                h.push(n);
                go(rows, c, h, load, best);
                h.pop();
                load[n] -= 1;
            }
        }
    }
    let mut best = u64::MAX;
    go(
        rows,
        c,
        &mut Vec::new(),
        &mut vec![0; rows.len() / c],
        &mut best,
    );
    best
}

#[test]
fn branch_and_bound_matches_exhaustive_hosting() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let shapes = [
        (2, 1),
        (4, 1),
        (4, 2),
        (6, 2),
        (6, 3),
        (8, 2),
        (8, 4),
        (6, 1),
    ];
    for trial in 0..240 {
        let (d, c) = shapes[trial % shapes.len()];
        let topo = ClusterTopology::new(d, c, 10.0, 1.0).unwrap();
        let rows: Vec<Vec<u64>> = (0..d)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        if rng.random_bool(0.6) {
                            rng.random_range(0..500)
                        } else {
                            0
                        }
                    })
                    .collect()
            })
            .collect();
        let v = VolumeMatrix::from_rows(rows.clone()).unwrap();
        let sol = solve_hosting(&v, &topo, DEFAULT_SEARCH_BUDGET).unwrap();
        assert!(sol.proved_optimal);
        assert_eq!(
            sol.max_egress,
            best_hosting(&rows, c),
            "d={d} c={c} rows={rows:?}"
        );
        assert_eq!(egress_of(&rows, c, &sol.hosting), sol.max_egress);
        let identity: Vec<usize> = (0..d).map(|b| b / c).collect();
        assert!(sol.max_egress <= egress_of(&rows, c, &identity));
    }
}

#[test]
fn crossing_traffic_is_localized() {
    // node 0 sends everything to batches 2,3 and node 1 to batches 0,1
    let rows = vec![
        vec![0, 0, 5, 5],
        vec![0, 0, 5, 5],
        vec![5, 5, 0, 0],
        vec![5, 5, 0, 0],
    ];
    let topo = ClusterTopology::new(4, 2, 10.0, 1.0).unwrap();
    let sol = solve_hosting(
        &VolumeMatrix::from_rows(rows.clone()).unwrap(),
        &topo,
        DEFAULT_SEARCH_BUDGET,
    )
    .unwrap();
    assert_eq!(egress_of(&rows, 2, &[0, 0, 1, 1]), 20);
    assert_eq!(sol.max_egress, 0);
    assert_eq!(sol.hosting, vec![1, 1, 0, 0]);
}

#[test]
fn single_node_has_no_egress() {
    let rows = vec![vec![3, 4, 5]; 3];
    let topo = ClusterTopology::new(3, 3, 10.0, 1.0).unwrap();
    let sol = solve_hosting(&VolumeMatrix::from_rows(rows).unwrap(), &topo, 10).unwrap();
    assert_eq!(sol.max_egress, 0);
}
