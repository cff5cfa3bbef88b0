use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vesseldistill::nets::*;
use vesseldistill::Error;
use vesseldistill_autograd::{Conv2dCfg, Graph, Tensor};

const VARIANTS: [&str; 4] = [TEACHER_SK_UNET, STUDENT_MOBILE, STUDENT_ERFNET, STUDENT_ENET];

fn random_input(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random::<f64>()).collect()).unwrap()
}

#[test]
fn full_networks_map_64_to_64_probabilities() {
    for v in VARIANTS {
        let net = SegmentationNetwork::<f32>::build(&NetworkSpec::full(v).unwrap(), 1).unwrap();
        let x = random_input(&[1, 1, 64, 64], 2).cast::<f32>();
        let p = net.predict(&x).unwrap();
        assert_eq!(p.shape(), &[1, 1, 64, 64], "{v}");
        assert!(p.data().iter().all(|&q| q > 0.0 && q < 1.0), "{v}");
    }
}

#[test]
fn indivisible_input_names_the_dimension() {
    let net = SegmentationNetwork::<f32>::build(&NetworkSpec::tiny(STUDENT_MOBILE), 0).unwrap();
    let err = net.predict(&Tensor::zeros(&[1, 1, 60, 64])).unwrap_err();
    match err {
        Error::Shape(m) => assert!(m.contains("height 60"), "{m}"),
        e => panic!("unexpected {e:?}"),
    }
    let err = net.predict(&Tensor::zeros(&[1, 1, 64, 36])).unwrap_err();
    assert!(matches!(err, Error::Shape(ref m) if m.contains("width 36")), "{err:?}");
}

#[test]
fn tap_resolutions_halve_per_level() {
    for v in VARIANTS {
        let mut spec = NetworkSpec::tiny(v);
        spec.depth = 4;
        spec.tap_levels = vec![1, 2, 3, 4];
        let net = SegmentationNetwork::<f32>::build(&spec, 3).unwrap();
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 1, 256, 256]));
        let out = net.forward(&mut g, x, false).unwrap();
        let chans = net.tap_channels();
        for (k, size) in [128, 64, 32, 16].into_iter().enumerate() {
            let e = g.shape(out.taps.encoder[k]);
            let d = g.shape(out.taps.decoder[k]);
            assert_eq!(e, &[1, chans[k], size, size], "{v} encoder tap {}", k + 1);
            assert_eq!(d, e, "{v} decoder tap {}", k + 1);
        }
    }
}

#[test]
fn parameter_counts_near_published_sizes() {
    let count = |v: &str| build_topology(&ArchitectureRegistry::builtin(), &NetworkSpec::full(v).unwrap())
        .unwrap()
        .param_count() as f64;
    let teacher = count(TEACHER_SK_UNET);
    let enet = count(STUDENT_ENET);
    assert!((teacher / 26.489e6 - 1.0).abs() <= 0.20, "teacher {teacher}");
    assert!((enet / 0.349e6 - 1.0).abs() <= 0.20, "enet {enet}");
    let mobile = count(STUDENT_MOBILE);
    let erfnet = count(STUDENT_ERFNET);
    assert!(teacher > mobile && mobile > erfnet && erfnet > enet, "{teacher} {mobile} {erfnet} {enet}");
}

#[test]
fn build_is_deterministic_per_seed() {
    let spec = NetworkSpec::tiny(STUDENT_ERFNET);
    let a = SegmentationNetwork::<f64>::build(&spec, 5).unwrap();
    let b = SegmentationNetwork::<f64>::build(&spec, 5).unwrap();
    let c = SegmentationNetwork::<f64>::build(&spec, 6).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
    assert_eq!(a.params().checksum(), b.params().checksum());
    let x = random_input(&[2, 1, 32, 32], 1);
    assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
    // f32 and f64 stores come from the same f64 draws
    let s = SegmentationNetwork::<f32>::build(&spec, 5).unwrap();
    assert_eq!(s.params(), &a.params().cast::<f32>());
}

fn weighted_sum(net: &SegmentationNetwork<f64>, x: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    let p = net.predict(x).unwrap();
    p.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let h = 1e-5;
    for v in VARIANTS {
        let mut spec = NetworkSpec::tiny(v);
        spec.depth = 2;
        spec.tap_levels = vec![1, 2];
        let mut net = SegmentationNetwork::<f64>::build(&spec, 11).unwrap();
        // the head starts at zero, which would hide everything upstream of it
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for t in net.params_mut().tensors_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.2..0.2);
            }
        }
        let x = random_input(&[1, 1, 16, 16], 12);
        let r = random_input(&[1, 1, 16, 16], 13);

        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let out = net.forward(&mut g, xv, true).unwrap();
        let rv = g.constant(r.clone());
        let m = g.mul(out.prob, rv).unwrap();
        let loss = g.sum_all(m).unwrap();
        let grads = g.backward(loss).unwrap();
        let analytic: Vec<Tensor<f64>> = out.params.iter().map(|&p| grads.get(p).unwrap().clone()).collect();

        let mut worst = 0.0f64;
        for (i, a) in analytic.iter().enumerate() {
            let n = a.numel();
            for j in [0, n / 2, n - 1] {
                let orig = net.params().tensors()[i].data()[j];
                net.params_mut().tensors_mut()[i].data_mut()[j] = orig + h;
                let up = weighted_sum(&net, &x, &r);
                net.params_mut().tensors_mut()[i].data_mut()[j] = orig - h;
                let down = weighted_sum(&net, &x, &r);
                net.params_mut().tensors_mut()[i].data_mut()[j] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = a.data()[j];
                let scale = an.abs().max(fd.abs());
                if scale > 1e-7 {
                    let rel = (an - fd).abs() / scale;
                    worst = worst.max(rel);
                    assert!(rel <= 1e-4, "{v} {} [{j}]: analytic {an} fd {fd}", net.params().names()[i]);
                } else {
                    assert!((an - fd).abs() <= 1e-9, "{v} {} [{j}]", net.params().names()[i]);
                }
            }
        }
        assert!(worst.is_finite());
    }
}

#[test]
fn unknown_variant_is_config_error() {
    assert!(matches!(NetworkSpec::full("resnet"), Err(Error::Config(_))));
    let spec = NetworkSpec::tiny("resnet");
    assert!(matches!(SegmentationNetwork::<f32>::build(&spec, 0), Err(Error::Config(_))));
}

/// Plain strided-conv encoder used to exercise registration.
struct Plain;

impl Architecture for Plain {
    fn name(&self) -> &'static str {
        "plain"
    }

    fn default_base_channels(&self) -> usize {
        4
    }

    fn encoder(&self, spec: &NetworkSpec, b: &mut TopologyBuilder, input: NodeId) -> vesseldistill::Result<EncoderOutput> {
        let mut x = input;
        let mut levels = Vec::new();
        for l in 0..spec.depth {
            let w = spec.base_channels << l;
            x = b.conv(&format!("down{l}"), x, w, (3, 3), Conv2dCfg::same(3, 3).with_stride(2))?;
            x = b.relu(x);
            levels.push(x);
        }
        Ok(EncoderOutput { stem: None, levels })
    }
}

#[test]
fn registry_accepts_new_architectures() {
    let mut reg = ArchitectureRegistry::builtin();
    reg.register(Box::new(Plain));
    assert!(reg.names().contains(&"plain"));
    let spec = NetworkSpec {
        variant: "plain".into(),
        depth: 2,
        base_channels: 4,
        tap_levels: vec![2],
        in_channels: 1,
        max_repeats: None,
    };
    let net = SegmentationNetwork::<f32>::build_with(&reg, &spec, 0).unwrap();
    assert_eq!(net.tap_channels(), vec![8]);
    let p = net.predict(&Tensor::zeros(&[1, 1, 8, 8])).unwrap();
    assert_eq!(p.shape(), &[1, 1, 8, 8]);
}

#[test]
fn stored_parameters_are_checked_against_the_topology() {
    let spec = NetworkSpec::tiny(STUDENT_ENET);
    let net = SegmentationNetwork::<f32>::build(&spec, 0).unwrap();
    let back = SegmentationNetwork::from_params(&spec, net.params().clone()).unwrap();
    assert_eq!(back.params(), net.params());
    let other = NetworkSpec::tiny(STUDENT_MOBILE);
    assert!(matches!(
        SegmentationNetwork::from_params(&other, net.params().clone()),
        Err(Error::Incompatible(_))
    ));
}
