use std::collections::BTreeMap;

use bwnet_tensor::{
    init_params, AdamState, GradPolicy, Mode, Padding, ParamGroup, ParamStore, RngState, Session, Tensor,
};

fn tiny_model(seed: u64) -> ParamStore {
    let mut rng = RngState::new(seed);
    let mut store = ParamStore::default();
    store.insert("conv", init_params(&[2, 1, 5, 1], 5, &mut rng).unwrap());
    store.insert("bn.gamma", Tensor::ones(&[2]).unwrap());
    store.insert("bn.beta", Tensor::zeros(&[2]).unwrap());
    store.insert_running_stats("bn", 2).unwrap();
    store.insert("fc", init_params(&[24, 3], 24, &mut rng).unwrap());
    store
}

fn train(seed: u64, steps: usize) -> ParamStore {
    let mut store = tiny_model(seed);
    let mut rng = RngState::new(seed ^ 0xabc);
    let mut data_rng = RngState::new(7);
    let x = Tensor::from_fn(&[4, 1, 12, 1], |_| data_rng.normal() as f32).unwrap();
    let labels = [0usize, 1, 2, 1];
    let group = ParamGroup::new("all", store.names().map(String::from), 1e-2);
    let mut adam = AdamState::default();
    for _ in 0..steps {
        let grads: BTreeMap<String, Tensor> = {
            let mut s = Session::new(&mut store, &mut rng, Mode::Train, GradPolicy::All);
            let xv = s.input(x.clone());
            let h = s.conv2d(xv, "conv", (1, 1), Padding::Same).unwrap();
            let h = s.batchnorm(h, "bn").unwrap();
            let h = s.dropout(h, 0.5).unwrap();
            let h = s.tape.reshape(h, &[4, 24]).unwrap();
            let h = s.dense(h, "fc", None).unwrap();
            let h = s.tape.log_softmax(h).unwrap();
            let loss = s.tape.cross_entropy(h, &labels).unwrap();
            s.backward(loss).unwrap()
        };
        adam.step(&mut store, &grads, std::slice::from_ref(&group)).unwrap();
    }
    store
}

#[test]
fn same_seed_gives_bitwise_identical_parameters() {
    let a = train(5, 20);
    let b = train(5, 20);
    for name in a.names().map(String::from).collect::<Vec<_>>() {
        assert_eq!(a.get(&name).unwrap().data(), b.get(&name).unwrap().data(), "{name}");
    }
    for (name, buf) in a.buffers() {
        assert_eq!(buf.data(), b.buffer(name).unwrap().data(), "{name}");
    }
}

#[test]
fn different_seeds_diverge() {
    let a = train(5, 3);
    let b = train(6, 3);
    assert_ne!(a.get("fc").unwrap().data(), b.get("fc").unwrap().data());
}
