use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::Subcommand;
use refcheck_core::sim::{serve, RegimeSpec, ServeOptions, Simulator};
use refcheck_core::time::SystemClock;

use super::{ok, runtime};
use crate::error::CliError;
use crate::Ctx;

#[derive(Subcommand, Debug)]
pub enum SimAction {
    /// Serve a regime over HTTP until interrupted
    Serve {
        /// Regime file (TOML)
        #[arg(long)]
        regime: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8089")]
        bind: String,
        /// Append every emission to this JSONL file
        #[arg(long)]
        emissions: Option<PathBuf>,
        /// Delay before each reply, milliseconds
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
        /// Require a bearer token read from this environment variable
        #[arg(long)]
        require_token_env: Option<String>,
    },
}

pub fn run(_ctx: &Ctx, action: SimAction) -> Result<ExitCode, CliError> {
    let SimAction::Serve {
        regime,
        bind,
        emissions,
        delay_ms,
        require_token_env,
    } = action;
    let spec = RegimeSpec::load(&regime).map_err(|e| CliError::Parse(format!("{}: {e}", regime.display())))?;
    let require_token = match require_token_env {
        Some(var) => Some(
            std::env::var(&var)
                .map_err(|_| CliError::Config(format!("environment variable {var} holding the token is not set")))?,
        ),
        None => None,
    };
    let sim = Simulator::new(spec, Arc::new(SystemClock)).map_err(|e| CliError::Parse(e.to_string()))?;
    if let Some(path) = &emissions {
        sim.log_to_file(path).map_err(|e| CliError::Io(e.to_string()))?;
    }
    let opts = ServeOptions {
        response_delay: Duration::from_millis(delay_ms),
        require_token,
    };
    let rt = runtime()?;
    rt.block_on(async move {
        let handle = serve(Arc::new(sim), &bind, opts).await.map_err(|e| CliError::Io(e.to_string()))?;
        println!("listening on {}", handle.base_url());
        tokio::signal::ctrl_c().await?;
        handle.shutdown().await;
        Ok::<_, CliError>(())
    })?;
    ok()
}
