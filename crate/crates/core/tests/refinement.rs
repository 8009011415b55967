use irbp::assembly::{assemble_block, stiffness_entry};
use irbp::dictionary::{refine, BasisId, Family, IndexSet, RefinementTree, Role};
use irbp::irbp::*;
use irbp::problems::{arctan2, arctan4, problem_1d_constant, problem_2d_polynomial};
use proptest::prelude::*;

fn run(cfg: &IrbpConfig) -> (IrbpState, RunReport, Vec<IrbpState>) {
    let mut states = Vec::new();
    let (s, r) = irbp_run_with(cfg, |st| states.push(st.clone())).unwrap();
    (s, r, states)
}

#[test]
fn index_sets_grow_and_rows_follow_columns() {
    for problem in [arctan2(), arctan4()] {
        let cfg = IrbpConfig::new(problem);
        let (_, report, states) = run(&cfg);
        assert_eq!(report.rows.len(), report.steps);
        let mut prev = IndexSet::levels(Family::Hat1D, 1, cfg.start_level - 1, Role::C);
        for s in &states {
            assert!(prev.is_subset(&s.c_cur));
            assert_eq!(s.c_cur.as_slice(), s.r_cur.as_slice());
            prev = s.c_cur.clone();
        }
        for r in &report.rows {
            assert_eq!(r.ratio, r.z_nnz as f64 / r.x_nnz as f64);
        }
    }
}

#[test]
fn l1_norm_condition_whenever_old_columns_are_used() {
    let mut checked = 0;
    for problem in [arctan2(), arctan4(), problem_2d_polynomial()] {
        let mut cfg = IrbpConfig::new(problem);
        cfg.max_steps = if cfg.problem.family == Family::Hat2D { 3 } else { 5 };
        let (_, report, _) = run(&cfg);
        for d in &report.details {
            if let Some(v) = d.coupling_norm {
                assert!(v >= 1.0 - 1e-8, "step {}: ‖A22⁻¹A21‖₁ = {v}", d.step);
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn zero_solution_triggers_fallback() {
    // u = 0: the error never decreases, so the second step falls back; steps
    // are driven by hand because Δz = 0 would stop the loop after one step
    let cfg = IrbpConfig::new(problem_1d_constant(0.0));
    let tree = RefinementTree::new(Family::Hat1D);
    let s1 = irbp_step(&IrbpState::initial(&cfg), &cfg, &tree).unwrap();
    assert!(!s1.history[0].1.fallback_used);
    assert!(s1.z.iter().all(|v| *v == 0.0));
    let s2 = irbp_step(&s1, &cfg, &tree).unwrap();
    assert!(s2.history[1].1.fallback_used);
    let full = s1.c_cur.union(&refine(&s1.c_cur, &tree).unwrap());
    assert_eq!(s2.c_cur.as_slice(), full.as_slice());

    let mut strict = cfg.clone();
    strict.fallback = Fallback::None;
    match irbp_step(&s1, &strict, &tree) {
        Err(IrbpError::Stagnated { step, .. }) => assert_eq!(step, 2),
        other => panic!("expected stagnation, got {other:?}"),
    }
    let (_, report) = irbp_run(&strict).unwrap();
    assert!(report.converged);
    assert_eq!(report.steps, 1);
}

#[test]
fn reports_roundtrip_through_files() {
    let mut cfg = IrbpConfig::new(arctan2());
    cfg.max_steps = 3;
    let (state, report, _) = run(&cfg);
    let dir = tempfile::tempdir().unwrap();
    report.save(dir.path()).unwrap();
    let rows = RunReport::read_csv_rows(std::fs::File::open(dir.path().join("report.csv")).unwrap()).unwrap();
    let json = RunReport::from_json(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(rows, json.rows);
    assert_eq!(json, report);

    let mut buf = Vec::new();
    write_solution_csv(&mut buf, &state.z_ids, &state.z).unwrap();
    let back = read_solution_csv(&buf[..]).unwrap();
    assert_eq!(back.len(), state.z.len());
    for (row, (id, z)) in back.iter().zip(state.z_ids.iter().zip(&state.z)) {
        let parsed = BasisId::new(Family::parse(&row.family).unwrap(), row.level, row.p, row.q).unwrap();
        assert_eq!(&parsed, id);
        assert_eq!(row.coefficient, *z);
    }
}

#[test]
fn header_names_the_table_columns() {
    let mut cfg = IrbpConfig::new(arctan2());
    cfg.max_steps = 1;
    let (_, report, _) = run(&cfg);
    let mut buf = Vec::new();
    report.write_csv(&mut buf).unwrap();
    let header = String::from_utf8(buf).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "step,l1_rows,l1_cols,z_nnz,fem_rows,fem_cols,x_nnz,ratio,rel_error,wall_ms");
}

#[test]
fn galerkin_resolve_is_reported_when_enabled() {
    let mut cfg = IrbpConfig::new(arctan2());
    cfg.max_steps = 2;
    cfg.galerkin = true;
    let (_, report, _) = run(&cfg);
    assert!(report.details.iter().all(|d| d.galerkin_rel_error.is_some()));
}

/// `a(u, u) = cᵀAc` against `∫ u'²` by midpoint differences of the expansion.
#[test]
fn stiffness_is_the_energy_of_the_expansion() {
    let ids = IndexSet::levels(Family::Hat1D, 1, 4, Role::S);
    let c: Vec<f64> = (0..ids.len()).map(|k| ((k * 13 % 7) as f64 - 3.0) / 4.0).collect();
    let a = assemble_block(&ids, &ids).unwrap().to_dense();
    let cv = nalgebra::DVector::from_vec(c.clone());
    let quad = cv.dot(&(&a * &cv));
    let e = Expansion::new(ids.as_slice(), &c);
    let n = 1 << 12;
    let h = 2.0 / n as f64;
    let fd: f64 = (0..n)
        .map(|i| {
            let x = -1.0 + i as f64 * h;
            let d = (e.eval(&[x + h]) - e.eval(&[x])) / h;
            d * d * h
        })
        .sum();
    assert!((quad - fd).abs() < 1e-10 * quad, "{quad} vs {fd}");
}

fn ids1d() -> impl Strategy<Value = Vec<BasisId>> {
    proptest::collection::vec((1u32..=6, 0.0f64..1.0), 1..12).prop_map(|v| {
        let mut ids: Vec<BasisId> = v
            .into_iter()
            .map(|(k, t)| {
                let count = (1u32 << k) - 1;
                BasisId::hat1d(k, 1 + ((t * count as f64) as u32).min(count - 1)).unwrap()
            })
            .collect();
        ids.sort();
        ids.dedup();
        ids
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distance_is_symmetric_and_plain_on_equal_sets(
        a in ids1d(),
        b in ids1d(),
        va in proptest::collection::vec(-5.0f64..5.0, 12),
        vb in proptest::collection::vec(-5.0f64..5.0, 12),
    ) {
        let (xa, xb) = (&va[..a.len()], &vb[..b.len()]);
        let d1 = zero_extended_distance(&a, xa, &b, xb);
        let d2 = zero_extended_distance(&b, xb, &a, xa);
        prop_assert_eq!(d1, d2);
        let same = zero_extended_distance(&a, xa, &a, &vb[..a.len()]);
        let plain = xa.iter().zip(&vb).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        prop_assert!((same - plain).abs() <= 1e-12 * (1.0 + plain));
    }

    #[test]
    fn stiffness_gram_is_symmetric_psd(ids in ids1d()) {
        let set = IndexSet::new(Role::S, ids.iter().copied());
        let a = assemble_block(&set, &set).unwrap().to_dense();
        for i in 0..ids.len() {
            for j in 0..ids.len() {
                prop_assert_eq!(a[(i, j)], a[(j, i)]);
                prop_assert_eq!(a[(i, j)], stiffness_entry(&set.as_slice()[i], &set.as_slice()[j]).unwrap());
            }
        }
        prop_assert!(a.symmetric_eigenvalues().min() > -1e-12);
    }
}
