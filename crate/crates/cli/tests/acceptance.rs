//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! fails if any criterion fails.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use ngcl_core::connectivity::{band_dtf, fit_mvar, FrequencyBand};
use ngcl_core::contrastive::{
    batch_objective, decoded_similarity, graph_contrastive_loss, graph_contrastive_with_grad, infograph_loss,
    infograph_with_grad, laplacian_spectrum, total_loss, PretrainConfig, SigmaMode,
};
use ngcl_core::encoder::{self, EncoderParams, Offsets};
use ngcl_core::evaluation::{cross_validate, roc_auc, CvConfig};
use ngcl_core::gat::{self, neighbor_count, predict_embedded, FinetuneConfig, GatParams};
use ngcl_core::graph::{
    augment_traced, degree_centrality, mask_nodes, normalize_importance, perturb_edges, AugmentationPolicy,
};
use ngcl_core::nn::{self, Parameters};
use ngcl_core::rng;
use ngcl_core::signalio::{synth_var_recording, Coupling};
use ngcl_core::synth::{synth_graph_dataset, SynthSpec};
use ngcl_core::{BrainGraph, Label, NodeFeatureMatrix, Segment};

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_graph(n: usize, density: f64, label: Label, r: &mut rng::Rng) -> BrainGraph {
    let mut a = DMatrix::from_fn(n, n, |_, _| {
        if r.random::<f64>() < density {
            r.random_range(0.05..1.0)
        } else {
            0.0
        }
    });
    a.fill_diagonal(0.0);
    let x = DMatrix::from_fn(n, 5, |_, _| r.random_range(0.0..1.0));
    BrainGraph::new(a, NodeFeatureMatrix::standard(x).unwrap(), label).unwrap()
}

/// Five channels, couplings 1→2 and 3→4 at lag 1, sources with lag-2 memory.
fn planted_var() -> Vec<Coupling> {
    vec![
        Coupling::new(0, 1, 1, 0.5),
        Coupling::new(2, 3, 1, 0.5),
        Coupling::new(0, 0, 2, 0.9),
        Coupling::new(2, 2, 2, 0.9),
    ]
}

fn planted_window(seed: u64) -> Segment {
    let rec = synth_var_recording(&planted_var(), 5, 500.0, 2.0, 1.0, seed).unwrap();
    assert_eq!(rec.n_samples(), 1000);
    Segment {
        samples: rec.samples,
        fs: 500.0,
        label: Label::Interictal,
    }
}

fn c1_dtf_recovery() -> Outcome {
    let start = Instant::now();
    let band = FrequencyBand::new("all", 1.0, 250.0).map_err(|e| e.to_string())?;
    let mut aucs = Vec::new();
    for seed in 0..20 {
        let model = fit_mvar(&planted_window(seed), 2).map_err(|e| e.to_string())?;
        let phi = band_dtf(&model, &band, true).map_err(|e| e.to_string())?.weights;
        let (mut scores, mut labels) = (Vec::new(), Vec::new());
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    scores.push(phi[(i, j)]);
                    let planted = (i, j) == (1, 0) || (i, j) == (3, 2);
                    labels.push(if planted { Label::Ictal } else { Label::Interictal });
                }
            }
        }
        aucs.push(roc_auc(&scores, &labels).map_err(|e| e.to_string())?.1);
    }
    let elapsed = start.elapsed();
    let worst = aucs.iter().copied().fold(1.0, f64::min);
    ensure(worst >= 0.95, || format!("min AUC {worst:.4}"))?;
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("min AUC {worst:.4} over 20 seeds in {elapsed:.2?}"))
}

fn c2_mvar_recovery() -> Outcome {
    let mut worst = 0.0f64;
    let mut hits = 0;
    for seed in 0..20 {
        let model = fit_mvar(&planted_window(seed), 2).map_err(|e| e.to_string())?;
        let err = (model.coefficient(1)[(1, 0)] - 0.5).abs();
        worst = worst.max(err);
        hits += usize::from(err <= 0.05);
    }
    ensure(hits == 20, || format!("{hits}/20 within 0.05, worst error {worst:.4}"))?;
    Ok(format!("20/20 within 0.05, worst error {worst:.4}"))
}

const FD_STEP: f64 = 1e-5;

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6)
}

fn check_params<P: Parameters + Clone>(params: &P, grads: &P, loss: impl Fn(&P) -> f64) -> Result<f64, String> {
    let analytic: Vec<(String, DMatrix<f64>)> = grads.tensors().into_iter().map(|(n, t)| (n, t.clone())).collect();
    let mut worst = 0.0f64;
    for (t, (name, g)) in analytic.iter().enumerate() {
        for idx in 0..g.len() {
            let mut p = params.clone();
            p.tensors_mut()[t][idx] += FD_STEP;
            let mut m = params.clone();
            m.tensors_mut()[t][idx] -= FD_STEP;
            let fd = (loss(&p) - loss(&m)) / (2.0 * FD_STEP);
            let e = rel_err(g[idx], fd);
            ensure(e < 1e-4, || format!("{name}[{idx}]: analytic {} vs fd {fd}", g[idx]))?;
            worst = worst.max(e);
        }
    }
    Ok(worst)
}

fn check_matrix(
    x: &DMatrix<f64>,
    grad: &DMatrix<f64>,
    loss: impl Fn(&DMatrix<f64>) -> f64,
    what: &str,
) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for idx in 0..x.len() {
        let mut p = x.clone();
        p[idx] += FD_STEP;
        let mut m = x.clone();
        m[idx] -= FD_STEP;
        let fd = (loss(&p) - loss(&m)) / (2.0 * FD_STEP);
        let e = rel_err(grad[idx], fd);
        ensure(e < 1e-4, || format!("{what}[{idx}]: analytic {} vs fd {fd}", grad[idx]))?;
        worst = worst.max(e);
    }
    Ok(worst)
}

fn c3_gradients() -> Outcome {
    let mut r = rng::seeded(303);
    let labels = [
        Label::Interictal,
        Label::Ictal,
        Label::Interictal,
        Label::Ictal,
        Label::Ictal,
    ];
    let (mut enc_worst, mut loss_worst, mut gat_worst) = (0.0f64, 0.0f64, 0.0f64);
    for instance in 0..5u64 {
        // encoder through the full pretraining objective
        let graphs: Vec<BrainGraph> = labels
            .iter()
            .map(|&l| random_graph(4 + (instance as usize) % 3, 0.5, l, &mut r))
            .collect();
        let refs: Vec<&BrainGraph> = graphs.iter().collect();
        let params = encoder::init_encoder(5, 16, instance).map_err(|e| e.to_string())?;
        let cfg = PretrainConfig {
            hidden: 16,
            ..PretrainConfig::default()
        };
        let (input, offsets) = encoder::stack_inputs(&params, &refs).map_err(|e| e.to_string())?;
        let pass = encoder::forward_nodes(&params, input.clone(), None);
        let s_global =
            decoded_similarity(&params, &pass.output, &offsets, SigmaMode::Median).map_err(|e| e.to_string())?;
        let (_, _, grads) =
            batch_objective(&params, &pass, &offsets, &labels, &s_global, &cfg).map_err(|e| e.to_string())?;
        let objective = |p: &EncoderParams| {
            let pass = encoder::forward_nodes(p, input.clone(), None);
            let (g, i, _) = batch_objective(p, &pass, &offsets, &labels, &s_global, &cfg).unwrap();
            total_loss(g, i, cfg.alpha)
        };
        enc_worst = enc_worst.max(check_params(&params, &grads, objective)?);

        // losses with respect to similarities and embeddings
        let b = labels.len();
        let sims = DMatrix::from_fn(b, b, |_, _| r.random_range(-1.0..1.0));
        let (_, d_sims) = graph_contrastive_with_grad(&sims, &labels, 0.3).map_err(|e| e.to_string())?;
        let f = |s: &DMatrix<f64>| graph_contrastive_loss(s, &labels, 0.3).unwrap();
        loss_worst = loss_worst.max(check_matrix(&sims, &d_sims, f, "sims")?);
        let offsets = Offsets::from_sizes([2, 3, 2, 4]);
        let nodes = DMatrix::from_fn(11, 4, |_, _| r.random_range(-1.0..1.0));
        let gemb = DMatrix::from_fn(4, 4, |_, _| r.random_range(-1.0..1.0));
        let (_, dn, dg) = infograph_with_grad(&nodes, &offsets, &gemb, 0.3).map_err(|e| e.to_string())?;
        let f = |n: &DMatrix<f64>| infograph_with_grad(n, &offsets, &gemb, 0.3).unwrap().0;
        loss_worst = loss_worst.max(check_matrix(&nodes, &dn, f, "node embedding")?);
        let f = |g: &DMatrix<f64>| infograph_with_grad(&nodes, &offsets, g, 0.3).unwrap().0;
        loss_worst = loss_worst.max(check_matrix(&gemb, &dg, f, "graph embedding")?);

        // classifier parameters and its input embeddings
        let sizes = [4usize, 6, 5];
        let offsets = Offsets::from_sizes(sizes);
        let gs: Vec<BrainGraph> = sizes
            .iter()
            .map(|&n| random_graph(n, 0.5, Label::Ictal, &mut r))
            .collect();
        let adjacency: Vec<&DMatrix<f64>> = gs.iter().map(|g| &g.adjacency).collect();
        let h = DMatrix::from_fn(15, 3, |_, _| r.random_range(-1.0..1.0));
        let glabels = [Label::Ictal, Label::Interictal, Label::Ictal];
        let gcfg = FinetuneConfig {
            heads: 2,
            embed: 3,
            ..FinetuneConfig::default()
        };
        let gat_params = gat::init_gat(3, &gcfg, instance).map_err(|e| e.to_string())?;
        let (_, grads, d_h) =
            gat::loss_and_grad(&gat_params, &h, &adjacency, &offsets, &glabels).map_err(|e| e.to_string())?;
        let f = |p: &GatParams| gat::loss_and_grad(p, &h, &adjacency, &offsets, &glabels).unwrap().0;
        gat_worst = gat_worst.max(check_params(&gat_params, &grads, f)?);
        let f = |x: &DMatrix<f64>| {
            gat::loss_and_grad(&gat_params, x, &adjacency, &offsets, &glabels)
                .unwrap()
                .0
        };
        gat_worst = gat_worst.max(check_matrix(&h, &d_h, f, "GAT input")?);
    }
    Ok(format!(
        "5 instances each, worst relative error encoder {enc_worst:.1e}, losses {loss_worst:.1e}, GAT {gat_worst:.1e}"
    ))
}

fn c4_closed_forms() -> Outcome {
    let mut worst = 0.0f64;
    for b in [3usize, 4, 8] {
        let labels: Vec<Label> = (0..b)
            .map(|i| if i % 2 == 0 { Label::Interictal } else { Label::Ictal })
            .collect();
        let sims = DMatrix::from_element(b, b, 0.42);
        let l = graph_contrastive_loss(&sims, &labels, 0.3).map_err(|e| e.to_string())?;
        let e = (l - ((b - 1) as f64).ln()).abs();
        ensure(e < 1e-9, || format!("graph loss B={b}: {l}"))?;
        worst = worst.max(e);

        // node embeddings orthogonal to every graph embedding: all scores equal
        let nodes = vec![DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.5, 0.0, 0.0]); b];
        let graphs = DMatrix::from_fn(b, 3, |g, j| if j == 0 { 0.0 } else { 1.0 + g as f64 });
        let l = infograph_loss(&nodes, &graphs, 0.3).map_err(|e| e.to_string())?;
        let e = (l - (b as f64).ln()).abs();
        ensure(e < 1e-9, || format!("node-graph loss B={b}: {l}"))?;
        worst = worst.max(e);
    }
    Ok(format!("B ∈ {{3, 4, 8}}, worst deviation {worst:.1e}"))
}

fn oracle_spectrum(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = (a + a.transpose()) / 2.0;
    m.fill_diagonal(0.0);
    let d: Vec<f64> = m.row_iter().map(|r| r.sum()).collect();
    let l = DMatrix::from_fn(n, n, |i, j| {
        f64::from(u8::from(i == j)) - m[(i, j)] / (d[i] * d[j]).sqrt()
    });
    let mut ev: Vec<f64> = SymmetricEigen::new(l).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn c5_spectra() -> Outcome {
    let mut r = rng::seeded(505);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..100u64 {
        let n = r.random_range(3..25);
        let g = random_graph(n, r.random_range(0.1..0.9), Label::Ictal, &mut r);
        let params = encoder::init_encoder(5, 32, k).map_err(|e| e.to_string())?;
        let h = encoder::encode_nodes(&params, &g.adjacency, &g.features.values, None).map_err(|e| e.to_string())?;
        let a_hat = encoder::decode_adjacency(&params, &h);
        let spec = laplacian_spectrum(&a_hat).map_err(|e| e.to_string())?.eigenvalues;
        for &v in &spec {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        ensure(spec.iter().all(|&v| (-1e-9..=2.0 + 1e-9).contains(&v)), || {
            format!("instance {k}: {spec:?}")
        })?;
    }
    let mut k3 = DMatrix::from_element(3, 3, 1.0);
    k3.fill_diagonal(0.0);
    let spec = laplacian_spectrum(&k3).map_err(|e| e.to_string())?.eigenvalues;
    let oracle = oracle_spectrum(&k3);
    for ((&s, &o), &e) in spec.iter().zip(&oracle).zip(&[0.0, 1.5, 1.5]) {
        ensure((s - e).abs() < 1e-9 && (o - e).abs() < 1e-9, || {
            format!("K3: {spec:?} vs oracle {oracle:?}")
        })?;
    }
    Ok(format!("100 decoded graphs in [{lo:.2e}, {hi:.4}], K3 = {spec:.3?}"))
}

/// Inclusion probabilities of two sequential weighted draws without
/// replacement.
fn two_draw_inclusion(w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    (0..w.len())
        .map(|i| {
            let first = w[i] / total;
            let second: f64 = (0..w.len())
                .filter(|&j| j != i)
                .map(|j| w[j] / total * w[i] / (total - w[j]))
                .sum();
            first + second
        })
        .collect()
}

fn within_3_sigma(counts: &[usize], probs: &[f64], trials: usize, what: &str) -> Result<f64, String> {
    let mut worst = 0.0f64;
    for (i, (&c, &p)) in counts.iter().zip(probs).enumerate() {
        let sd = (p * (1.0 - p) / trials as f64).sqrt();
        let z = (c as f64 / trials as f64 - p).abs() / sd.max(1e-12);
        ensure(z <= 3.0, || {
            format!("{what} {i}: frequency {} vs {p:.4} ({z:.2}σ)", c as f64 / trials as f64)
        })?;
        worst = worst.max(z);
    }
    Ok(worst)
}

fn c6_augmentation() -> Outcome {
    let mut r = rng::seeded(606);
    let policy = AugmentationPolicy::default();
    for k in 0..100 {
        let n = r.random_range(2..30);
        let g = random_graph(n, r.random_range(0.05..1.0), Label::Interictal, &mut r);
        let (a, trace) = augment_traced(&g, &policy, &mut r).map_err(|e| e.to_string())?;
        let masked = (0.2 * n as f64).floor() as usize;
        let pairs = (0.2 * trace.candidate_pairs as f64).floor() as usize;
        ensure(trace.masked_nodes.len() == masked, || {
            format!("graph {k}: {} masked, expected {masked}", trace.masked_nodes.len())
        })?;
        ensure(trace.perturbed_pairs.len() == pairs, || {
            format!("graph {k}: {} pairs, expected {pairs}", trace.perturbed_pairs.len())
        })?;
        ensure(a.adjacency.iter().zip(g.adjacency.iter()).all(|(x, y)| x <= y), || {
            format!("graph {k}: weight increased")
        })?;
    }

    let trials = 10_000;
    let g = random_graph(10, 0.4, Label::Ictal, &mut r);
    let c = normalize_importance(&degree_centrality(&g));
    let weights: Vec<f64> = c.iter().map(|v| 1.0 - v + 1e-6).collect();
    let mut counts = vec![0usize; 10];
    for _ in 0..trials {
        for v in mask_nodes(&g, &c, 0.2, &mut r).map_err(|e| e.to_string())?.1 {
            counts[v] += 1;
        }
    }
    let z_nodes = within_3_sigma(&counts, &two_draw_inclusion(&weights), trials, "node")?;

    let mut a = DMatrix::zeros(5, 5);
    for &(i, j, w) in &[(1, 0, 0.9), (2, 1, 0.3), (3, 2, 0.5), (4, 3, 0.2), (0, 4, 0.7)] {
        a[(i, j)] = w;
    }
    let g = BrainGraph::new(
        a,
        NodeFeatureMatrix::standard(DMatrix::from_element(5, 5, 0.5)).unwrap(),
        Label::Ictal,
    )
    .unwrap();
    let c = normalize_importance(&degree_centrality(&g));
    let pairs = [(0, 1), (0, 4), (1, 2), (2, 3), (3, 4)];
    let weights: Vec<f64> = pairs.iter().map(|&(i, j)| 1.0 - (c[i] + c[j]) / 2.0 + 1e-6).collect();
    let total: f64 = weights.iter().sum();
    let mut counts = vec![0usize; pairs.len()];
    for _ in 0..trials {
        let (_, chosen) = perturb_edges(&g, &c, 0.2, &mut r).map_err(|e| e.to_string())?;
        ensure(chosen.len() == 1, || format!("{} pairs chosen", chosen.len()))?;
        counts[pairs.iter().position(|p| *p == chosen[0]).unwrap()] += 1;
    }
    let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let z_pairs = within_3_sigma(&counts, &probs, trials, "pair")?;
    Ok(format!(
        "counts exact on 100 graphs, monotone; worst deviation {z_nodes:.2}σ nodes, {z_pairs:.2}σ pairs"
    ))
}

/// Recomputes the classifier output from its attention weights; `garbage`
/// replaces every value vector that the attending row gives zero weight.
fn replay_attention(gat: &GatParams, h: &DMatrix<f64>, att: &gat::AttentionMap, garbage: Option<f64>) -> f64 {
    let mut x = h.clone();
    for (l, layer) in gat.layers.iter().enumerate() {
        let z = &x * &layer.weight;
        let mut agg = DMatrix::zeros(z.nrows(), gat.width());
        for (head, alpha) in att.layers[l].iter().enumerate() {
            let zh = z.columns(head * gat.embed, gat.embed).into_owned();
            for i in 0..z.nrows() {
                let mut values = zh.clone();
                if let Some(v) = garbage {
                    for j in 0..z.nrows() {
                        if alpha[(i, j)] == 0.0 {
                            values.row_mut(j).fill(v);
                        }
                    }
                }
                let row = alpha.row(i) * &values;
                agg.view_mut((i, head * gat.embed), (1, gat.embed)).copy_from(&row);
            }
        }
        x = if l + 1 == gat.layers.len() { agg } else { nn::elu(&agg) };
    }
    let pooled = DMatrix::from_row_slice(1, x.ncols(), x.row_mean().as_slice());
    nn::sigmoid(gat.output.forward(&pooled)[0])
}

fn c7_topk_attention() -> Outcome {
    let mut r = rng::seeded(707);
    let expected = [(1usize, 1usize), (4, 2), (7, 4), (20, 10)];
    for &(n, k) in &expected {
        ensure(neighbor_count(n, 0.5) == k, || {
            format!("N={n}: k={} expected {k}", neighbor_count(n, 0.5))
        })?;
        for trial in 0..10u64 {
            let g = random_graph(n, 0.7, Label::Ictal, &mut r);
            let h = DMatrix::from_fn(n, 8, |_, _| r.random_range(-1.0..1.0));
            let gat_params = gat::init_gat(8, &FinetuneConfig::default(), trial).map_err(|e| e.to_string())?;
            let (p, att) = predict_embedded(&gat_params, &h, &g.adjacency).map_err(|e| e.to_string())?;
            for alpha in att.layers.iter().flatten() {
                for row in alpha.row_iter() {
                    let nonzero = row.iter().filter(|&&v| v != 0.0).count();
                    ensure(nonzero <= k, || format!("N={n}: row with {nonzero} > {k} nonzeros"))?;
                    ensure((row.sum() - 1.0).abs() <= 1e-6, || {
                        format!("N={n}: row sums to {}", row.sum())
                    })?;
                }
            }
            let replay = replay_attention(&gat_params, &h, &att, None);
            let poisoned = replay_attention(&gat_params, &h, &att, Some(1e6));
            ensure((replay - p).abs() < 1e-12, || format!("N={n}: replay {replay} vs {p}"))?;
            ensure(poisoned == replay, || {
                format!("N={n}: masked values changed the output")
            })?;
        }
    }
    Ok("k = 1, 2, 4, 10 for N = 1, 4, 7, 20; rows sparse and normalised; masked values inert".into())
}

fn c8_auc_oracle() -> Outcome {
    let mut r = rng::seeded(808);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let n = r.random_range(4..300);
        let levels = r.random_range(2..40);
        let mut labels: Vec<Label> = (0..n)
            .map(|_| {
                if r.random::<bool>() {
                    Label::Ictal
                } else {
                    Label::Interictal
                }
            })
            .collect();
        labels[0] = Label::Ictal;
        labels[1] = Label::Interictal;
        let scores: Vec<f64> = (0..n)
            .map(|_| r.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let (_, auc) = roc_auc(&scores, &labels).map_err(|e| e.to_string())?;
        let (mut wins, mut pairs) = (0.0, 0.0);
        for i in (0..n).filter(|&i| labels[i] == Label::Ictal) {
            for j in (0..n).filter(|&j| labels[j] == Label::Interictal) {
                pairs += 1.0;
                wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 1.0,
                    std::cmp::Ordering::Equal => 0.5,
                    std::cmp::Ordering::Less => 0.0,
                };
            }
        }
        let e = (auc - wins / pairs).abs();
        ensure(e <= 1e-12, || format!("instance {k}: {auc} vs {}", wins / pairs))?;
        worst = worst.max(e);
    }
    Ok(format!("50 instances with ties, worst deviation {worst:.1e}"))
}

fn run(args: &[&str]) -> Result<(), String> {
    let mut argv = vec!["ngcl"];
    argv.extend_from_slice(args);
    match ngcl_cli::run(argv) {
        0 => Ok(()),
        code => Err(format!("`ngcl {}` exited with {code}", args.join(" "))),
    }
}

fn column_mean(report: &Path, column: &str) -> Result<f64, String> {
    let text = fs::read_to_string(report).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or("empty report")?.split(',').collect();
    let c = header.iter().position(|h| *h == column).ok_or("missing column")?;
    let values: Vec<f64> = lines
        .map(|l| l.split(',').nth(c).unwrap().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

fn c9_end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("synth.gds");
    let out = dir.path().join("cv");
    let start = Instant::now();
    run(&[
        "synth",
        "--out",
        data.to_str().unwrap(),
        "--n-per-class",
        "100",
        "--nodes",
        "20",
        "--soz-size",
        "4",
        "--noise",
        "0.3",
    ])?;
    run(&[
        "evaluate",
        "--cv",
        "--data",
        data.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
    ])?;
    let elapsed = start.elapsed();
    let report = out.join("report.csv");
    let rows = fs::read_to_string(&report).map_err(|e| e.to_string())?.lines().count() - 1;
    let acc = column_mean(&report, "acc")?;
    let auc = column_mean(&report, "auc")?;
    ensure(rows == 10, || format!("{rows} folds"))?;
    ensure(acc >= 0.95 && auc >= 0.97, || {
        format!("mean accuracy {acc:.4}, mean AUC {auc:.4}")
    })?;
    ensure(elapsed < Duration::from_secs(300), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "10-fold mean accuracy {acc:.4}, mean AUC {auc:.4} in {elapsed:.1?}"
    ))
}

fn c10_pretraining_value() -> Outcome {
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..10u64 {
        let spec = SynthSpec {
            n_per_class: 50,
            noise: 2.0,
            seed,
            ..SynthSpec::default()
        };
        let graphs = synth_graph_dataset(&spec).map_err(|e| e.to_string())?;
        let mut acc = [0.0; 2];
        for (slot, enabled) in [true, false].into_iter().enumerate() {
            let mut cfg = CvConfig {
                pretrain_enabled: enabled,
                folds: 5,
                seed,
                ..CvConfig::default()
            };
            cfg.pretrain.hidden = 64;
            let report = cross_validate(&graphs, &cfg).map_err(|e| e.to_string())?;
            acc[slot] = report.summary("acc").mean.ok_or("undefined accuracy")?;
        }
        wins += usize::from(acc[0] >= acc[1]);
        lines.push(format!("{:.2}/{:.2}", acc[0], acc[1]));
    }
    let detail = format!("pretrained ≥ random in {wins}/10 seeds (acc {})", lines.join(" "));
    ensure(wins >= 8, || detail.clone())?;
    Ok(detail)
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    files.sort();
    files
}

fn c11_determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = root.path().join("small.cfg");
    fs::write(
        &cfg,
        "hidden = 16\npretrain.epochs = 3\nfinetune.epochs = 3\nfolds = 3\nseed = 11\n",
    )
    .map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for run_id in 0..2 {
        let dir = root.path().join(format!("run{run_id}"));
        fs::create_dir(&dir).map_err(|e| e.to_string())?;
        let p = |name: &str| dir.join(name).to_str().unwrap().to_string();
        let c = cfg.to_str().unwrap();
        run(&[
            "--config",
            c,
            "synth",
            "--out",
            &p("d.gds"),
            "--n-per-class",
            "12",
            "--nodes",
            "8",
            "--soz-size",
            "2",
        ])?;
        run(&[
            "--config",
            c,
            "pretrain",
            "--data",
            &p("d.gds"),
            "--out",
            &p("enc.ckpt"),
        ])?;
        let before = fs::read(p("enc.ckpt")).map_err(|e| e.to_string())?;
        run(&[
            "--config",
            c,
            "finetune",
            "--data",
            &p("d.gds"),
            "--encoder",
            &p("enc.ckpt"),
            "--out",
            &p("gat.ckpt"),
        ])?;
        ensure(fs::read(p("enc.ckpt")).map_err(|e| e.to_string())? == before, || {
            "finetune rewrote the encoder".into()
        })?;
        ensure(!Path::new(&p("gat.ckpt.encoder")).exists(), || {
            "frozen run wrote a tuned encoder".into()
        })?;
        run(&[
            "--config",
            c,
            "evaluate",
            "--data",
            &p("d.gds"),
            "--encoder",
            &p("enc.ckpt"),
            "--gat",
            &p("gat.ckpt"),
            "--out-dir",
            &p("eval"),
        ])?;
        run(&[
            "--config",
            c,
            "evaluate",
            "--cv",
            "--data",
            &p("d.gds"),
            "--out-dir",
            &p("cv"),
        ])?;
        runs.push(snapshot(&dir));
    }
    let names: Vec<&str> = runs[0].iter().map(|(n, _)| n.as_str()).collect();
    ensure(runs[0] == runs[1], || {
        let differing: Vec<&str> = runs[0]
            .iter()
            .zip(&runs[1])
            .filter(|(a, b)| a != b)
            .map(|(a, _)| a.0.as_str())
            .collect();
        format!("outputs differ: {differing:?}")
    })?;
    Ok(format!(
        "{} artifacts byte-identical across runs; encoder untouched by finetune",
        names.len()
    ))
}

fn main() {
    let criteria: [(&str, Check); 11] = [
        ("1 DTF ground-truth recovery", c1_dtf_recovery),
        ("2 MVAR coefficient recovery", c2_mvar_recovery),
        ("3 gradient checks", c3_gradients),
        ("4 closed-form losses", c4_closed_forms),
        ("5 spectral invariants", c5_spectra),
        ("6 augmentation exactness", c6_augmentation),
        ("7 top-k attention", c7_topk_attention),
        ("8 AUC oracle", c8_auc_oracle),
        ("9 end-to-end synthetic CV", c9_end_to_end),
        ("10 pretraining value", c10_pretraining_value),
        ("11 determinism", c11_determinism),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                println!("FAIL  {name}: {detail}");
                failed.push(name);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
