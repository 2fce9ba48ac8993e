//! Diagnostic: is the latent geometry separable beyond what f2 achieves?
use typeone::backbone::gradcheck::bind_params;
use typeone::backbone::{adam_step, AdamState, ParamSet, Rng, Tape, Tensor};
use typeone::data::{generate_corpus, one_hot, SyntheticConfig};
use typeone::models::SvaeBundle;

fn main() {
    let bundle = SvaeBundle::<f32>::load(std::path::Path::new("/tmp/calib-svae")).unwrap();
    let (train, test) = generate_corpus::<f32>(42, &SyntheticConfig::default());
    let l = bundle.latent;

    let encode = |set: &typeone::data::LabeledImageSet<f32>| -> Vec<f32> {
        let mut out = Vec::with_capacity(set.count() * l);
        for chunk in set.images.chunks(256 * 784) {
            let n = chunk.len() / 784;
            out.extend(bundle.encode_mu(chunk, n).data);
        }
        out
    };
    let train_mu = encode(&train);
    let test_mu = encode(&test);

    // f2's own accuracy on test mu
    let f2_acc = bundle.latent_classifier_accuracy(&test);
    println!("f2 on test mu: {f2_acc:.4}");

    // independent probe: 2-layer MLP on mu
    let mut rng = Rng::derive(7, "probe-init", 0);
    let mut p = ParamSet::<f32>::new();
    let hidden = 64;
    p.insert("w1", Tensor::new((0..hidden*l).map(|_| rng.normal::<f32>() * (1.0/(l as f32).sqrt())).collect(), vec![hidden, l]));
    p.insert("b1", Tensor::zeros(vec![hidden]));
    p.insert("w2", Tensor::new((0..10*hidden).map(|_| rng.normal::<f32>() * (1.0/(hidden as f32).sqrt())).collect(), vec![10, hidden]));
    p.insert("b2", Tensor::zeros(vec![10]));
    let mut adam = AdamState::new(&p, 1e-3);
    let n_train = train.count();
    for epoch in 0..6 {
        let mut erng = Rng::derive(8, "probe-epoch", epoch);
        let perm = erng.permutation(n_train);
        for batch in perm.chunks(256) {
            let mut xs = Vec::with_capacity(batch.len()*l);
            let mut ys = Vec::with_capacity(batch.len());
            for &i in batch { xs.extend_from_slice(&train_mu[i*l..(i+1)*l]); ys.push(train.labels[i]); }
            let mut tape = Tape::new();
            let bound = bind_params(&mut tape, &p, true);
            let x = tape.constant(Tensor::new(xs, vec![batch.len(), l]));
            let y = tape.constant(one_hot(&ys, 10));
            let h = tape.linear(x, bound.id("w1"), bound.id("b1"));
            let h = tape.relu(h);
            let logits = tape.linear(h, bound.id("w2"), bound.id("b2"));
            let ce = tape.softmax_cross_entropy(logits, y);
            let loss = tape.mean_all(ce);
            let grads = tape.backward(loss);
            let mut g = ParamSet::new();
            for (name, t) in p.iter() { g.insert(name.clone(), grads.of(bound.id(name), &t.shape)); }
            let (np, na) = adam_step(&p, &g, &adam).unwrap();
            p = np; adam = na;
        }
    }
    // evaluate probe
    let mut hits = 0;
    for i in 0..test.count() {
        let mut tape = Tape::new();
        let bound = bind_params(&mut tape, &p, false);
        let x = tape.constant(Tensor::new(test_mu[i*l..(i+1)*l].to_vec(), vec![1, l]));
        let h = tape.linear(x, bound.id("w1"), bound.id("b1"));
        let h = tape.relu(h);
        let logits = tape.linear(h, bound.id("w2"), bound.id("b2"));
        let pred = typeone::backbone::tensor::argmax(&tape.value(logits).data);
        if pred == test.labels[i] as usize { hits += 1; }
    }
    println!("independent probe on test mu: {:.4}", hits as f64 / test.count() as f64);

    // sigma magnitudes
    let (_, sigma) = bundle.encode_gaussian(&test.images[..784*256], 256);
    let mean_sigma: f32 = sigma.data.iter().sum::<f32>() / sigma.data.len() as f32;
    println!("mean sigma: {mean_sigma:.4}");
    // mu norms
    let norms: f64 = test_mu.chunks(l).take(256).map(|m| m.iter().map(|v| (*v as f64)*(*v as f64)).sum::<f64>().sqrt()).sum::<f64>() / 256.0;
    println!("mean |mu|: {norms:.3}");
}
