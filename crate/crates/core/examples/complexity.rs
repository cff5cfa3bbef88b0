use vesseldistill::nets::{NetworkSpec, SegmentationNetwork, STUDENT_ENET, STUDENT_ERFNET, STUDENT_MOBILE, TEACHER_SK_UNET};

fn main() {
    for v in [TEACHER_SK_UNET, STUDENT_MOBILE, STUDENT_ERFNET, STUDENT_ENET] {
        let spec = NetworkSpec::full(v).unwrap();
        let net = SegmentationNetwork::<f32>::build(&spec, 0).unwrap();
        let flops = net.count_flops(&[1, 1, 256, 256]).unwrap();
        println!("{v:18} params {:>10} flops {:>8.3}G taps {:?}", net.param_count(), flops as f64 / 1e9, net.tap_channels());
    }
}
