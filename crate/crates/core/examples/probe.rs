// temporary probe: actual cap marginals for the five-mode interacting solve
use bose2d_core::gibbs::{gibbs_state, GibbsOptions};
use bose2d_core::model::{ModeSet, Potential};

fn main() {
    let s = ModeSet::ball(1.0).unwrap();
    let w = Potential::gaussian(1.0, 0.02, &s).unwrap();
    for caps in [[512u16, 8, 8, 8, 8], [512, 12, 12, 12, 12]] {
        let t0 = std::time::Instant::now();
        let sol = gibbs_state(&s, &w, 1.0, 16.0, 1.0 / 16.0, &caps,
            &GibbsOptions { max_sector_dim: 40000, ..Default::default() }).unwrap();
        println!("caps {:?}  ({:.1?})", caps, t0.elapsed());
        println!("  log_z = {:.12}  tail = {:.3e}  <N> = {:.4}", sol.log_z, sol.tail_share, sol.expected_n);
        for m in 0..5 {
            let hit = sol.cap_hit[m]; let nxt = sol.cap_next[m];
            let r = if nxt > 0.0 { hit / nxt } else { f64::NAN };
            let tail = if r < 1.0 { hit * r / (1.0 - r) } else { f64::INFINITY };
            println!("  mode {m}: P(cap) = {hit:.3e}  P(cap-1) = {nxt:.3e}  ratio {r:.3}  tail_est {tail:.3e}");
        }
    }
}
