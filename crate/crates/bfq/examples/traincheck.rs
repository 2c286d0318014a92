// temporary diagnostic: normalized SGD at b=2, full criterion-8/9/10 dry run
use bfq::analyze::{convergence_fraction, quant_error};
use bfq::calibrate::{gen_synthetic, train, Archetype, TrainConfig};
use bfq::quant::QuantScheme;
use bfq::transform::HadamardTransform;

fn main() {
    let scheme = QuantScheme::new(2).unwrap();
    for archetype in [Archetype::PositiveTail, Archetype::NegativeRegion, Archetype::Boundary] {
        let cal = gen_synthetic(archetype, 64, 128, 0).unwrap();
        let config = TrainConfig::default();
        let (learned, report) = train(&cal, &config).unwrap();
        let (mse_l, _) = quant_error(cal.weights(), cal.samples(), &learned, &scheme).unwrap();
        let had = HadamardTransform::new(64).unwrap();
        let (mse_h, _) = quant_error(cal.weights(), cal.samples(), &had, &scheme).unwrap();
        let c = &report.loss_curve;
        let frac = convergence_fraction(c, 200).unwrap();
        println!(
            "{:>15}: ratio={:.3} (mse {:.4} vs had {:.4}) | L0={:.1} L100={:.1} L250={:.1} L500={:.1} best={:.1}@{} | c200={:.3}",
            archetype.name(), mse_l / mse_h, mse_l, mse_h, c[0], c[100], c[250], c[500],
            report.final_total, report.best_step, frac
        );
    }
    let mut lower = 0;
    for seed in 0..5u64 {
        let cal = gen_synthetic(Archetype::PositiveTail, 64, 128, seed).unwrap();
        let with = TrainConfig { seed, ..Default::default() };
        let without = TrainConfig { seed, lambda_uniform: 0.0, ..Default::default() };
        let (p_with, r_with) = train(&cal, &with).unwrap();
        let (p_wo, _) = train(&cal, &without).unwrap();
        let (m_with, kl_with) = quant_error(cal.weights(), cal.samples(), &p_with, &scheme).unwrap();
        let (m_wo, kl_wo) = quant_error(cal.weights(), cal.samples(), &p_wo, &scheme).unwrap();
        let frac = convergence_fraction(&r_with.loss_curve, 200).unwrap();
        if kl_with < kl_wo { lower += 1; }
        println!(
            "seed {seed}: kl {:.4} vs {:.4} ({}) mse {:.4}/{:.4} | conv@40% {:.3} best@{}",
            kl_with, kl_wo, if kl_with < kl_wo { "lower" } else { "HIGHER" },
            m_with, m_wo, frac, r_with.best_step
        );
    }
    println!("lambda lowers hard KL in {lower}/5 seeds");
}
