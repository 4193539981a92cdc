//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line.

use std::time::Instant;

use mortar_schwarz::assembly::{interior_stiffness, sine_source, StiffnessWeight};
use mortar_schwarz::coarse_space::{EnrichmentType, SelectionPolicy};
use mortar_schwarz::coefficients::{ChannelPattern, CoefficientField};
use mortar_schwarz::experiments::{run_single, ExperimentConfig, Problem, RunRecord};
use mortar_schwarz::geometry::{build_meshes, build_partition, MortarPolicy, ResolutionLayout};
use mortar_schwarz::krylov::{iteration_bound, pcg, PcgOptions};
use mortar_schwarz::linalg::SparseMatrix;
use mortar_schwarz::mortar::mortar_residuals;
use mortar_schwarz::preconditioner::ApplicationMode;
use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::CscMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 5e-6;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn config(n: usize, cells: usize, cells_alt: usize, alphas: [f64; 3], kind: EnrichmentType, policy: SelectionPolicy) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        subdomains: [n, n],
        cells,
        cells_alt,
        matching: cells == cells_alt,
        enrichment: kind,
        policy,
        ..Default::default()
    };
    c.set_alphas(alphas);
    c
}

fn kappa(r: &RunRecord) -> f64 {
    r.kappa.expect("κ computed").kappa
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))
}

fn sparse_solve(a: &SparseMatrix, b: &DVector<f64>) -> DVector<f64> {
    let csc = CscMatrix::from(a.csr());
    let chol = CscCholesky::factor(&csc).expect("SPD system");
    let x = chol.solve(&DMatrix::from_column_slice(b.len(), 1, b.as_slice()));
    DVector::from_column_slice(x.as_slice())
}

fn energy(a: &SparseMatrix, v: &DVector<f64>) -> f64 {
    v.dot(&a.mul_vec(v)).sqrt()
}

const JUMPS: [f64; 3] = [1.0, 1e4, 1e6];
const MILD: [f64; 3] = [1.0, 1e3, 1e4];

fn criterion_1() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut selected = 0;
    for (n, layout) in [
        (3, ResolutionLayout::Checkerboard { even: 6, odd: 9 }),
        (2, ResolutionLayout::Checkerboard { even: 4, odd: 7 }),
        (3, ResolutionLayout::Uniform(6)),
    ] {
        let p = build_partition(n, n).unwrap();
        let m = build_meshes(&p, layout).unwrap();
        let field = CoefficientField::constant(&m, 1.0).unwrap();
        let problem = Problem::from_parts(p, m, field, MortarPolicy::Coarse).unwrap();
        for kind in [EnrichmentType::I, EnrichmentType::II] {
            for b in problem.local_bases(kind, SelectionPolicy::Threshold(50.0)).unwrap() {
                worst = b.eigenvalues.iter().fold(worst, |w, l| w.max((l - 1.0).abs()));
                selected += b.selected;
            }
        }
    }
    let t = Instant::now();
    let mut c = config(3, 6, 6, [1.0; 3], EnrichmentType::II, SelectionPolicy::Threshold(50.0));
    c.matching = true;
    let r = run_single(&c).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    check(
        worst <= 1e-10 && selected == 0 && r.total_selected == 0 && secs < 5.0,
        format!("max |λ-1| = {worst:.2e}, selected = {selected}, 3x3 run {secs:.2} s"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (nx, ny, layout) in [
        (2, 2, ResolutionLayout::Checkerboard { even: 6, odd: 9 }),
        (3, 3, ResolutionLayout::Checkerboard { even: 4, odd: 7 }),
        (3, 2, ResolutionLayout::Checkerboard { even: 9, odd: 5 }),
        (2, 1, ResolutionLayout::Uniform(5)),
    ] {
        for mortar in [MortarPolicy::Coarse, MortarPolicy::Fine] {
            let p = build_partition(nx, ny).unwrap();
            let m = build_meshes(&p, layout).unwrap();
            let field = CoefficientField::constant(&m, 1.0).unwrap();
            let problem = Problem::from_parts(p, m, field, mortar).unwrap();
            for _ in 0..20 {
                let u = random_vec(&mut rng, problem.n_free());
                let norm = u.amax();
                for (c, res) in problem.couplings.iter().zip(mortar_residuals(&problem.couplings, &problem.system.dofs, &u)) {
                    for r in res {
                        worst = worst.max(r.abs() / (norm * c.length));
                        count += 1;
                    }
                }
            }
        }
    }
    check(worst <= 1e-12, format!("max |∫(u_m - u_s)ψ| / (‖u‖∞|γ|) = {worst:.2e} over {count} tests"))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_apply: f64 = 0.0;
    let mut worst_block: f64 = 0.0;
    for n in [2, 3] {
        for mortar in [MortarPolicy::Coarse, MortarPolicy::Fine] {
            let mut c = config(n, 6, 9, JUMPS, EnrichmentType::II, SelectionPolicy::Threshold(50.0));
            c.mortar = mortar.clone();
            let problem = Problem::build(&c).unwrap();
            for kind in [EnrichmentType::I, EnrichmentType::II] {
                for policy in [SelectionPolicy::Threshold(50.0), SelectionPolicy::Fixed(3)] {
                    let bases = problem.local_bases(kind, policy).unwrap();
                    let coarse = problem.coarse_basis(&bases).unwrap();
                    let reference = problem.preconditioner(ApplicationMode::Reference, &bases, &coarse).unwrap();
                    let blockwise = problem.preconditioner(ApplicationMode::Blockwise, &bases, &coarse).unwrap();
                    for _ in 0..20 {
                        let v = random_vec(&mut rng, problem.n_free());
                        let (x, y) = (reference.apply(&v).unwrap(), blockwise.apply(&v).unwrap());
                        worst_apply = worst_apply.max((&x - &y).norm() / x.norm());
                    }
                    if mortar == MortarPolicy::Coarse && matches!(policy, SelectionPolicy::Fixed(_)) {
                        worst_block = worst_block.max(block_inverse_defect(&problem, &blockwise, &bases));
                    }
                }
            }
        }
    }
    check(
        worst_apply <= 1e-10 && worst_block <= 1e-10,
        format!("blockwise vs reference {worst_apply:.2e}, B_C vs dense inverse {worst_block:.2e}"),
    )
}

/// Dense `(R_0^type)ᵀ (R_0^type A_N (R_0^type)ᵀ)⁻¹ R_0^type` against the assembled `B_C`.
fn block_inverse_defect(
    problem: &Problem,
    prec: &mortar_schwarz::preconditioner::Preconditioner,
    bases: &[mortar_schwarz::coarse_space::LocalEigenBasis],
) -> f64 {
    let bc = prec.block_operands().unwrap().dense_block_c();
    let dofs = &problem.system.dofs;
    let n = dofs.dim();
    let off = dofs.interior_range().start;
    let nr = dofs.n_interior;
    let a = problem.system.stiffness.to_dense();
    let mut an = DMatrix::zeros(n + nr, n + nr);
    an.view_mut((0, 0), (n, n)).copy_from(&a);
    let a12 = a.columns(off, nr).into_owned();
    an.view_mut((0, n), (n, nr)).copy_from(&a12);
    an.view_mut((n, 0), (nr, n)).copy_from(&a12.transpose());
    for r in &dofs.interior_ranges {
        let blk = a.view((r.start, r.start), (r.len(), r.len()));
        an.view_mut((n + r.start - off, n + r.start - off), (r.len(), r.len())).copy_from(&blk);
    }
    let n0 = dofs.n_skeleton();
    let ne: usize = bases.iter().map(|b| b.selected).sum();
    let mut rt = DMatrix::zeros(n0 + ne, n + nr);
    rt.view_mut((0, 0), (n0, n)).copy_from(&problem.average.prolongation.to_dense().transpose());
    let mut col = n0;
    for (b, r) in bases.iter().zip(&dofs.interior_ranges) {
        for k in 0..b.selected {
            for (i, row) in r.clone().enumerate() {
                rt[(col, n + row - off)] = b.eigenvectors[(i, k)];
            }
            col += 1;
        }
    }
    let inner = (&rt * &an * rt.transpose()).try_inverse().expect("coarse matrix invertible");
    let oracle = rt.transpose() * inner * &rt;
    (&bc - &oracle).amax() / oracle.amax()
}

fn criterion_4(runs: &[RunRecord]) -> Outcome {
    let (a, b) = (kappa(&runs[0]), kappa(&runs[1]));
    let gap = (a - b).abs() / a.min(b);
    check(gap <= 0.10, format!("κ(1,1e3,1e4) = {a:.4e}, κ(1,1e4,1e6) = {b:.4e}, gap {:.1}%", 100.0 * gap))
}

fn criterion_5(sweep: &[RunRecord]) -> Outcome {
    let ks: Vec<f64> = sweep.iter().map(kappa).collect();
    let monotone = ks.windows(2).all(|w| w[1] <= 1.01 * w[0]);
    let ratio = ks[7] / ks[0];
    let list: Vec<String> = ks.iter().map(|k| format!("{k:.3e}")).collect();
    check(monotone && ratio <= 1e-4, format!("κ(m) = [{}], κ(7)/κ(0) = {ratio:.2e}", list.join(", ")))
}

fn criterion_6(coarse: &RunRecord, fine: &RunRecord) -> Outcome {
    let ratio = kappa(fine) / kappa(coarse);
    check(
        (1.3..=3.0).contains(&ratio),
        format!("H/h 6 → 12: κ {:.4e} → {:.4e}, factor {ratio:.3}", kappa(coarse), kappa(fine)),
    )
}

fn criterion_7() -> Outcome {
    let count = |kind| {
        let mut c = config(6, 6, 9, JUMPS, kind, SelectionPolicy::Threshold(50.0));
        c.count_only = true;
        run_single(&c).unwrap().total_selected
    };
    let (t1, t2) = (count(EnrichmentType::I), count(EnrichmentType::II));
    check(
        (t2 as f64) <= 0.25 * t1 as f64,
        format!("type I total {t1}, type II total {t2} ({:.1}%)", 100.0 * t2 as f64 / t1 as f64),
    )
}

fn criterion_8(runs: &[&RunRecord]) -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for r in runs {
        if r.converged != Some(true) {
            continue;
        }
        let iters = r.iterations.unwrap();
        let bound = 2 * iteration_bound(kappa(r), TOL);
        ok &= iters <= bound;
        if iters > bound {
            details.push(format!("{} iterations > {bound} at κ = {:.3e}", iters, kappa(r)));
        }
    }
    // solution of the same 5e-6 runs against a sparse direct solve; a tight
    // solve is reported alongside but does not decide the criterion
    let mut worst: f64 = 0.0;
    let mut worst_tight: f64 = 0.0;
    for (n, alphas, policy) in [
        (3, JUMPS, SelectionPolicy::Threshold(50.0)),
        (6, JUMPS, SelectionPolicy::Threshold(50.0)),
        (6, MILD, SelectionPolicy::Fixed(7)),
    ] {
        let c = config(n, 6, 9, alphas, EnrichmentType::II, policy);
        let problem = Problem::build(&c).unwrap();
        let bases = problem.local_bases(c.enrichment, c.policy).unwrap();
        let coarse = problem.coarse_basis(&bases).unwrap();
        let prec = problem.preconditioner(ApplicationMode::Reference, &bases, &coarse).unwrap();
        let (a, b) = (&problem.system.stiffness, &problem.system.load);
        let direct = sparse_solve(a, b);
        let rel_err = |x: &DVector<f64>| energy(a, &(x - &direct)) / energy(a, &direct);
        let (x, rep) = pcg(a, b, &prec, &PcgOptions { tol: TOL, ..Default::default() }).unwrap();
        ok &= rep.converged;
        worst = worst.max(rel_err(&x));
        let (x, _) = pcg(a, b, &prec, &PcgOptions { tol: 1e-9, ..Default::default() }).unwrap();
        worst_tight = worst_tight.max(rel_err(&x));
    }
    ok &= worst <= 1e-8;
    details.insert(
        0,
        format!(
            "{} runs within 2x the CG bound, A-norm error vs direct {worst:.2e} at tol {TOL:e} ({worst_tight:.2e} at tol 1e-9)",
            runs.len()
        ),
    );
    check(ok, details.join("; "))
}

/// Conforming P1 on the merged structured mesh of the unit square, assembled independently.
fn conforming_solution(nx: usize, ny: usize, alpha: impl Fn(f64, f64) -> f64) -> (Vec<[f64; 2]>, DVector<f64>) {
    let node = |c: usize, r: usize| r * (nx + 1) + c;
    let coords: Vec<[f64; 2]> = (0..=ny)
        .flat_map(|r| (0..=nx).map(move |c| [c as f64 / nx as f64, r as f64 / ny as f64]))
        .collect();
    let interior: Vec<bool> = (0..=ny)
        .flat_map(|r| (0..=nx).map(move |c| c > 0 && c < nx && r > 0 && r < ny))
        .collect();
    let mut index = vec![usize::MAX; coords.len()];
    let mut k = 0;
    for (v, &inside) in interior.iter().enumerate() {
        if inside {
            index[v] = k;
            k += 1;
        }
    }
    let mut a = DMatrix::zeros(k, k);
    let mut f = DVector::zeros(k);
    for r in 0..ny {
        for c in 0..nx {
            let (v00, v10, v11, v01) = (node(c, r), node(c + 1, r), node(c + 1, r + 1), node(c, r + 1));
            for tri in [[v00, v10, v11], [v00, v11, v01]] {
                let p = tri.map(|v| coords[v]);
                let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1])).abs();
                let centre = [(p[0][0] + p[1][0] + p[2][0]) / 3.0, (p[0][1] + p[1][1] + p[2][1]) / 3.0];
                let al = alpha(centre[0], centre[1]);
                // gradients of the barycentric coordinates
                let grads: Vec<[f64; 2]> = (0..3)
                    .map(|i| {
                        let (j, l) = ((i + 1) % 3, (i + 2) % 3);
                        [(p[j][1] - p[l][1]) / (2.0 * area), (p[l][0] - p[j][0]) / (2.0 * area)]
                    })
                    .collect();
                // load by the three-edge-midpoint rule
                let mid = |i: usize, j: usize| sine_source(0.5 * (p[i][0] + p[j][0]), 0.5 * (p[i][1] + p[j][1]));
                let m = [mid(0, 1), mid(1, 2), mid(2, 0)];
                let load = [0.5 * (m[0] + m[2]), 0.5 * (m[0] + m[1]), 0.5 * (m[1] + m[2])];
                for i in 0..3 {
                    let gi = index[tri[i]];
                    if gi == usize::MAX {
                        continue;
                    }
                    f[gi] += area / 3.0 * load[i];
                    for j in 0..3 {
                        let gj = index[tri[j]];
                        if gj != usize::MAX {
                            a[(gi, gj)] += al * area * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                        }
                    }
                }
            }
        }
    }
    let u = a.cholesky().expect("SPD").solve(&f);
    let mut full = DVector::zeros(coords.len());
    for (v, &i) in index.iter().enumerate() {
        if i != usize::MAX {
            full[v] = u[i];
        }
    }
    (coords, full)
}

fn criterion_9() -> Outcome {
    let n = 8;
    let alpha = |x: f64, y: f64| if x > 0.3 && x < 0.7 && y > 0.4 { 1e3 } else { 1.0 };
    let p = build_partition(2, 1).unwrap();
    let m = build_meshes(&p, ResolutionLayout::Uniform(n)).unwrap();
    let field = CoefficientField::from_fn(&m, alpha).unwrap();
    let problem = Problem::from_parts(p, m, field, MortarPolicy::Coarse).unwrap();
    let u = sparse_solve(&problem.system.stiffness, &problem.system.load);
    let broken = problem.system.dofs.extend(&u);

    // subdomains are 1/2 × 1 with n cells per axis
    let (nx, ny) = (2 * n, n);
    let (coords, conforming) = conforming_solution(nx, ny, alpha);
    let mut worst: f64 = 0.0;
    for (g, &(sub, v)) in problem.broken.space.owner.iter().enumerate() {
        let [x, y] = problem.meshes[sub].coords[v];
        let c = (x * nx as f64).round() as usize;
        let r = (y * ny as f64).round() as usize;
        let k = r * (nx + 1) + c;
        assert!((coords[k][0] - x).abs() < 1e-12 && (coords[k][1] - y).abs() < 1e-12);
        worst = worst.max((broken[g] - conforming[k]).abs());
    }
    check(worst <= 1e-10, format!("max nodal difference {worst:.2e} on {} broken nodes", broken.len()))
}

fn criterion_10(configs: &[ExperimentConfig]) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut pairs = 0;
    for c in configs {
        let problem = Problem::build(c).unwrap();
        for b in problem.local_bases(c.enrichment, c.policy).unwrap() {
            let mesh = &problem.meshes[b.subdomain];
            let a = interior_stiffness(mesh, &problem.field, StiffnessWeight::True).unwrap();
            let bm = interior_stiffness(mesh, &problem.field, c.enrichment.weight()).unwrap();
            for k in 0..b.selected {
                let x = b.eigenvectors.column(k);
                let lam = b.eigenvalues[k];
                let r = (&a * x - lam * (&bm * x)).norm() / (lam * x.norm());
                worst = worst.max(r);
                pairs += 1;
            }
        }
    }
    check(worst <= 1e-8, format!("max relative residual {worst:.2e} over {pairs} retained pairs"))
}

#[test]
fn acceptance_criteria() {
    let threshold = SelectionPolicy::Threshold(50.0);
    let table1: Vec<RunRecord> = [MILD, JUMPS]
        .iter()
        .map(|&a| run_single(&config(6, 6, 9, a, EnrichmentType::II, threshold)).unwrap())
        .collect();
    let sweep: Vec<RunRecord> = (0..=7)
        .map(|m| run_single(&config(6, 6, 9, JUMPS, EnrichmentType::II, SelectionPolicy::Fixed(m))).unwrap())
        .collect();
    let coarse = run_single(&config(3, 6, 9, JUMPS, EnrichmentType::II, threshold)).unwrap();
    let fine = run_single(&config(3, 12, 18, JUMPS, EnrichmentType::II, threshold)).unwrap();

    let mut all_runs: Vec<&RunRecord> = table1.iter().chain(&sweep).collect();
    all_runs.push(&coarse);
    all_runs.push(&fine);

    let eig_configs = vec![
        config(6, 6, 9, JUMPS, EnrichmentType::I, threshold),
        config(6, 6, 9, JUMPS, EnrichmentType::II, threshold),
        config(6, 6, 9, MILD, EnrichmentType::I, threshold),
        config(6, 6, 9, JUMPS, EnrichmentType::II, SelectionPolicy::Fixed(7)),
        config(3, 12, 18, JUMPS, EnrichmentType::I, threshold),
    ];

    let results: Vec<(usize, &str, Outcome)> = vec![
        (1, "constant-coefficient spectra", criterion_1()),
        (2, "mortar condition", criterion_2()),
        (3, "blockwise/reference equivalence", criterion_3()),
        (4, "jump robustness", criterion_4(&table1)),
        (5, "enrichment sweep", criterion_5(&sweep)),
        (6, "H/h scaling", criterion_6(&coarse, &fine)),
        (7, "type II efficiency", criterion_7()),
        (8, "PCG consistency", criterion_8(&all_runs)),
        (9, "conforming limit", criterion_9()),
        (10, "eigenpair residuals", criterion_10(&eig_configs)),
    ];

    let mut failed = Vec::new();
    for (id, name, outcome) in &results {
        match outcome {
            Ok(d) => println!("criterion {id:>2} PASS  {name}: {d}"),
            Err(d) => {
                println!("criterion {id:>2} FAIL  {name}: {d}");
                failed.push(*id);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

#[test]
fn pattern_defaults_are_three_valued() {
    let p = ChannelPattern::default();
    assert_eq!(p.period, 3);
    assert!(p.validate().is_ok());
}
