use certloc::formulation::build_cost_matrices;
use certloc::lifting::{self, ConstraintTag};
use certloc::recovery;
use certloc::sdp::{self, Variant};
use certloc::simulation::{self, EdgeStrategy, SceneConfig};
use std::collections::HashMap;

fn main() {
    let seed = 300u64;
    let mut config = SceneConfig::standard(2, 120, 0.1, seed);
    for b in config.inner_biases.iter_mut() {
        let n = (b[0]*b[0]+b[1]*b[1]+b[2]*b[2]).sqrt();
        for k in 0..3 { b[k] *= 0.15 / n; }
    }
    let sc = simulation::generate_scene(&config).unwrap();
    let synth = simulation::synthesize_bearings(&sc).unwrap();
    let (instance, _gt) = simulation::make_instance(&sc, &synth, EdgeStrategy::Consecutive).unwrap();
    let cost = build_cost_matrices(&instance).unwrap();
    let layout = lifting::layout(2).unwrap();
    let cs = lifting::build_constraints(&layout, &Variant::DR.options());
    let qcqp = lifting::assemble_qcqp(&cost.marginalized, cs.clone(), layout).unwrap();
    let sdp_problem = sdp::relax(&qcqp, None);
    let sol = sdp::solve(&sdp_problem, &Default::default());
    let (zvec, ratio) = recovery::rank_one(&sol.z, &layout).unwrap();
    println!("ratio(r-block) {ratio:.2e}");

    // Constraint violations at the extracted vector, worst per family.
    let mut worst: HashMap<String, f64> = HashMap::new();
    for c in &cs {
        let v = (c.eval(&zvec) - c.rhs).abs();
        let e = worst.entry(format!("{:?}", c.tag)).or_insert(0.0);
        if v > *e { *e = v; }
    }
    let mut keys: Vec<_> = worst.iter().collect();
    keys.sort_by(|a, b| b.1.partial_cmp(a.1).unwrap());
    for (k, v) in keys { println!("  {k}: worst violation {v:.3e}"); }

    // Trace feasibility of Z itself on the same constraints.
    let mut worst_trace: f64 = 0.0;
    for c in &cs {
        let mut t = 0.0;
        for &(i, j, q) in &c.entries {
            t += if i == j { q * sol.z[(i, i)] } else { 2.0 * q * sol.z[(i, j)] };
        }
        worst_trace = worst_trace.max((t - c.rhs).abs());
    }
    println!("worst trace violation of Z: {worst_trace:.3e}");

    // Eigenvalues of the full (r,y)+aux matrix: how rank-one is FULL Z?
    let eig = sol.z.clone().symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    println!("full-Z top eigenvalues: {:?}", &vals[..5]);
    let m0 = layout.reduced_dim();
    let ry = sol.z.view((0,0),(m0,m0)).into_owned();
    let eig2 = ry.symmetric_eigen();
    let mut v2: Vec<f64> = eig2.eigenvalues.iter().cloned().collect();
    v2.sort_by(|a, b| b.partial_cmp(a).unwrap());
    println!("(r,y)-block top eigenvalues: {:?}", &v2[..5]);
}
