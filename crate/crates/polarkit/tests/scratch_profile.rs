use std::time::Instant;

use polarkit::net::{attention_forward, init_params, modulation_forward, NetworkConfig};
use polarkit::tensor::{concat_channels, ParamSet, Tensor};

fn t<R>(name: &str, f: impl FnOnce() -> R) -> R {
    let t0 = Instant::now();
    let r = f();
    println!("{name:32} {:?}", t0.elapsed());
    r
}

fn mk(shape: [usize; 4], grad: bool) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    Tensor::leaf(shape, (0..n).map(|i| (i % 97) as f32 / 97.0 - 0.4).collect(), grad)
}

#[test]
#[ignore]
fn op_costs() {
    let x = mk([1, 8, 64, 64], true);
    let w33 = mk([8, 8, 3, 3], true);
    let w11 = mk([24, 16, 1, 1], true);
    let dw = mk([24, 1, 3, 3], true);
    let g = mk([1, 8, 1, 1], true);
    let b = mk([1, 8, 1, 1], true);
    let x16 = mk([1, 16, 64, 64], true);
    let x24 = mk([1, 24, 64, 64], true);

    t("conv2d 3x3 8->8", || x.conv2d(&w33, None, 1, 1));
    t("conv1x1 16->24", || x16.conv1x1(&w11, None));
    t("dwconv2d 24ch", || x24.dwconv2d(&dw, None));
    t("layer_norm 8ch", || x.layer_norm(&g, &b, 1e-6));
    t("instance_norm", || x.instance_norm(1e-6));
    t("gelu", || x.gelu());
    t("relu", || x.relu());
    t("add", || x.add(&x));
    t("mul", || x.mul(&x));
    t("concat", || concat_channels(&[&x, &x]));
    t("slice", || x24.slice_channels(0, 8));
    t("reshape", || x.reshape([1, 1, 8, 4096]));
    let q = mk([1, 1, 4096, 8], true);
    let k = mk([1, 1, 8, 4096], true);
    let aff = t("matmul 8x4096 * 4096x8", || k.matmul(&q));
    t("softmax_last 8x8", || aff.softmax_last());
    t("matmul 4096x8 * 8x8", || q.matmul(&aff));
    t("transpose_last2 8x4096", || k.transpose_last2());
    t("pixel_shuffle", || mk([1, 32, 32, 32], true).pixel_shuffle(2));
    t("pixel_unshuffle", || x.pixel_unshuffle(2));
    t("mean_all", || x.mean_all());

    let cfg = NetworkConfig::tiny();
    let params: ParamSet<f32> = init_params(&cfg, 1);
    let y = mk([1, 8, 64, 64], false);
    let xf = mk([1, 8, 64, 64], false);
    let (ax, _ay) = t("attention fwd (enc1)", || {
        attention_forward(&xf, &y, cfg.head_counts[0], &params, "enc1.u0.attn")
    });
    t("modulation fwd (enc1)", || {
        modulation_forward(&ax, &y, cfg.modulation_expansion, &params, "enc1.u0.mod")
    });

    let loss = t("forward 40 convs worth", || {
        let mut acc = x.conv2d(&w33, None, 1, 1);
        for _ in 0..9 {
            acc = acc.conv2d(&w33, None, 1, 1);
        }
        acc.mean_all()
    });
    t("backward 10-conv chain", || loss.backward().unwrap());
}
