use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Subcommand;
use refcheck_core::attest::{
    verify, verify_with_body, AttestationReport, ConfigurationManifest, Enclave, PublicKeyBytes, RootKey,
    SignedResponse, Verification,
};
use refcheck_core::digest::Digest256;
use refcheck_core::time::Timestamp;

use super::{append_verdict, exit, ok, open_write, read_json, write_json};
use crate::error::{code, CliError};
use crate::Ctx;

#[derive(Subcommand, Debug)]
pub enum AttestAction {
    /// Generate a root key; the hex seed goes to --out, the public key to stdout
    Keygen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a configuration manifest from the files it commits to
    Manifest {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        system_prompt: PathBuf,
        #[arg(long)]
        serving_code: PathBuf,
        /// Inference parameter, key=value (repeatable)
        #[arg(long = "param", value_parser = parse_param)]
        params: Vec<(String, String)>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Commit a manifest under a root key and sign one response
    Sign {
        #[arg(long)]
        root_key: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        response: PathBuf,
        /// Receives report.json and signed.json
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Check a signed response against its report and a root public key
    Verify {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        signed: PathBuf,
        /// Root public key, 64 lowercase hex characters
        #[arg(long)]
        root_pubkey: String,
        /// Response body; when given its digest must match the signed one
        #[arg(long)]
        response: Option<PathBuf>,
    },
}

fn parse_param(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn file_digest(path: &Path) -> Result<Digest256, CliError> {
    Ok(Digest256::of(&read_bytes(path)?))
}

#[cfg(unix)]
fn write_secret(path: &Path, text: &str) -> Result<(), CliError> {
    use std::io::Write;
    use std::os::unix::fs::OpenOptionsExt;
    let mut f = std::fs::OpenOptions::new()
        .write(true)
        .create_new(true)
        .mode(0o600)
        .open(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

#[cfg(not(unix))]
fn write_secret(path: &Path, text: &str) -> Result<(), CliError> {
    if path.exists() {
        return Err(CliError::Io(format!("{} already exists", path.display())));
    }
    std::fs::write(path, text).map_err(CliError::from)
}

pub fn run(ctx: &Ctx, action: AttestAction) -> Result<ExitCode, CliError> {
    match action {
        AttestAction::Keygen { out } => {
            let key = RootKey::random();
            write_secret(&out, &format!("{}\n", key.seed_hex()))?;
            ctx.emit(&format!("{}\n", key.public()), &serde_json::json!({ "root_pubkey": key.public() }));
            ok()
        }
        AttestAction::Manifest {
            weights,
            system_prompt,
            serving_code,
            params,
            out,
        } => {
            let manifest = ConfigurationManifest {
                weights_digest: file_digest(&weights)?,
                system_prompt_digest: file_digest(&system_prompt)?,
                serving_code_digest: file_digest(&serving_code)?,
                inference_params: params.into_iter().collect::<BTreeMap<_, _>>(),
                created_at: Timestamp::now(),
            };
            write_json(&out, &manifest)?;
            ctx.emit(
                &format!("{}\n", manifest.digest()),
                &serde_json::json!({ "manifest_digest": manifest.digest() }),
            );
            ok()
        }
        AttestAction::Sign {
            root_key,
            manifest,
            response,
            out_dir,
        } => {
            let root = RootKey::load(&root_key).map_err(|e| CliError::Parse(format!("{}: {e}", root_key.display())))?;
            let manifest: ConfigurationManifest = read_json(&manifest)?;
            let body = read_bytes(&response)?;
            let (manifest, report, keyholder) =
                Enclave::new(root).commit(manifest).map_err(|e| CliError::Io(e.to_string()))?;
            let signed = keyholder.sign_response(&body).map_err(|e| CliError::Io(e.to_string()))?;
            keyholder.close();
            std::fs::create_dir_all(&out_dir)?;
            write_bytes(&out_dir.join("report.json"), &report.to_bytes())?;
            write_bytes(&out_dir.join("signed.json"), &signed.to_bytes())?;
            ctx.emit(
                &format!("{}\n", manifest.digest()),
                &serde_json::json!({ "manifest_digest": manifest.digest(), "out_dir": out_dir }),
            );
            ok()
        }
        AttestAction::Verify {
            report,
            signed,
            root_pubkey,
            response,
        } => {
            let report: AttestationReport = read_json(&report)?;
            let signed: SignedResponse = read_json(&signed)?;
            let root: PublicKeyBytes = serde_json::from_value(serde_json::Value::String(root_pubkey))
                .map_err(|e| CliError::Parse(format!("--root-pubkey: {e}")))?;
            let v = match &response {
                Some(path) => verify_with_body(&read_bytes(path)?, &signed, &report, &root),
                None => verify(&signed, &report, &root),
            };
            let detail = serde_json::to_value(&v).expect("verification serializes");
            let (text, label) = match &v {
                Verification::Verified { manifest_digest } => (format!("verified {manifest_digest}\n"), "verified".to_string()),
                Verification::Rejected { reason } => (format!("rejected: {reason}\n"), format!("rejected: {reason}")),
            };
            if ctx.ledger_configured() {
                let mut ledger = open_write(ctx)?;
                append_verdict(&mut ledger, "attestation", &signed.response_digest.to_hex(), &label, detail.clone())?;
            }
            ctx.emit(&text, &detail);
            Ok(exit(if v.is_verified() { code::OK } else { code::NEGATIVE }))
        }
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut v = bytes.to_vec();
    v.push(b'\n');
    std::fs::write(path, v).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
