//! Planner behaviour on small instances of the benchmark grid.

use obda_core::bench::{gen_grid, gen_grid_data, GridPoint};
use obda_core::mapping::Tbox;
use obda_core::oracle::DataInstance;
use obda_core::planner::{collect_for_planning, plan, PlanChoice, PlanKind};
use obda_core::stats::CostConstants;
use std::sync::OnceLock;

fn data() -> &'static DataInstance {
    static DATA: OnceLock<DataInstance> = OnceLock::new();
    DATA.get_or_init(|| gen_grid_data(2000, 7).unwrap())
}

fn plans_at(j: u32, m: u32, r: u32) -> Vec<PlanChoice> {
    let g = gen_grid(GridPoint { j, m, r, atoms: 3 }).unwrap();
    let t = Tbox::default();
    let stats = collect_for_planning(&g.mappings, &t, data()).unwrap();
    plan(&g.query, &g.mappings, &t, &stats, &CostConstants::default(), 3).unwrap()
}

#[test]
fn many_redundant_mappings_favour_a_join_of_unions() {
    let plans = plans_at(10, 6, 5);
    assert_eq!(plans[0].kind, PlanKind::Ujucq);
    let ucq = plans.iter().find(|p| p.kind == PlanKind::Ucq).unwrap();
    assert!(ucq.cost.total > plans[0].cost.total);
    assert_eq!(ucq.n_cqs, 216);
}

#[test]
fn single_mapping_costs_stay_close() {
    let plans = plans_at(10, 1, 0);
    let ucq = plans.iter().find(|p| p.kind == PlanKind::Ucq).unwrap();
    for p in &plans {
        let ratio = p.cost.total / ucq.cost.total;
        assert!((0.5..=2.0).contains(&ratio), "{} ratio {ratio}", p.cover);
    }
}

#[test]
fn ranking_is_deterministic() {
    let a = plans_at(5, 3, 1);
    let b = plans_at(5, 3, 1);
    let key = |ps: &[PlanChoice]| ps.iter().map(|p| (p.cover.to_string(), p.cost.total)).collect::<Vec<_>>();
    assert_eq!(key(&a), key(&b));
    for w in a.windows(2) {
        assert!(w[0].cost.total <= w[1].cost.total);
    }
}
