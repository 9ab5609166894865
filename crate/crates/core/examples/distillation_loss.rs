//! Ground-truth, distillation and blended losses for a few logit pairs, and
//! how the gradient on the student logits moves with the temperature.

use metaphor_detect::corpus::Label;
use metaphor_detect::distill::{
    batch_objective, ce_loss, kd_loss, temperature_softmax, total_loss, DistillConfig,
};
use ndarray::array;

fn main() {
    let student = [1.2, -0.4];
    let teacher = [2.5, -2.5];
    for tau in [1.0, 2.0, 4.0] {
        let soft = temperature_softmax(&teacher, tau).unwrap();
        println!(
            "teacher softened at tau = {tau}: [{:.4}, {:.4}]",
            soft[0], soft[1]
        );
    }

    let l_gt = ce_loss(&student, Label::Literal).unwrap();
    println!("\nCE = {l_gt:.5}");
    for (alpha, tau) in [(1.0, 2.0), (0.7, 2.0), (0.5, 1.0), (0.3, 5.0)] {
        let l_kd = kd_loss(&student, &teacher, tau).unwrap();
        let cfg = DistillConfig {
            alpha,
            tau,
            enabled: true,
        };
        let b = total_loss(l_gt, l_kd, &cfg);
        println!(
            "alpha {alpha:.1} tau {tau:.0}: KD {:.5}  total {:.5}",
            b.l_kd, b.l_total
        );
    }

    println!("\ngradient of the KD term alone (alpha = 0):");
    let s = array![[1.2, -0.4]];
    let t = array![[2.5, -2.5]];
    for tau in [1.0, 2.0, 4.0, 8.0, 16.0] {
        let cfg = DistillConfig {
            alpha: 0.0,
            tau,
            enabled: true,
        };
        let (loss, grad) =
            batch_objective(s.view(), &[Label::Literal], Some(t.view()), &cfg).unwrap();
        println!(
            "  tau {tau:>4}: loss {:.5}  dL/dz = [{:+.5}, {:+.5}]",
            loss.l_total,
            grad[[0, 0]],
            grad[[0, 1]]
        );
    }
}
