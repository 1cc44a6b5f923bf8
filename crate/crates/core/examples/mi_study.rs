//! Exact mutual information on the tiny world, with and without noise.

use recobf::harness::{mi_tiny_world_study, TinyWorldConfig};

fn main() -> recobf::Result<()> {
    for (name, cfg) in [
        ("stochastic", TinyWorldConfig::default()),
        ("noiseless", TinyWorldConfig::deterministic()),
    ] {
        let r = mi_tiny_world_study(&cfg)?;
        println!("{name} ({} cells)", r.cells);
        println!("  H(C^u)                {:.4}", r.h_c_u);
        println!("  I(C^o,V^o,V^u;C^u)    {:.4}", r.i_all);
        println!("  I(C^o,V^o;C^u)        {:.4}", r.i_co_vo);
        println!("  I(V^u;C^u)            {:.4}", r.i_vu);
        println!("  I(C^o;C^u|V^u)        {:.4}", r.i_co_given_vu);
        println!(
            "  chain residuals       {:.1e} {:.1e}",
            r.chain_residual, r.expanded_chain_residual
        );
        println!(
            "  Bayes log loss        {:.4} with V^u, {:.4} without",
            r.bayes_loss_with_user, r.bayes_loss_without_user
        );
    }
    Ok(())
}
