use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use docmt_core::llm::{Script, DEFAULT_TIMEOUT};
use docmt_core::{
    AgentConfig, ChatBackend, GenerationSettings, HttpBackend, LanguagePair, MatchMode, RetryPolicy, ScriptedBackend,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    Openai {
        base_url: String,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: u64,
        #[serde(default = "default_attempts")]
        max_attempts: u32,
        #[serde(default = "default_backoff_ms")]
        initial_backoff_ms: u64,
    },
    /// Replays a script file; relative paths resolve against the config file.
    Scripted { script: PathBuf },
}

fn default_timeout_secs() -> u64 {
    DEFAULT_TIMEOUT.as_secs()
}

fn default_attempts() -> u32 {
    RetryPolicy::default().max_attempts
}

fn default_backoff_ms() -> u64 {
    RetryPolicy::default().initial_delay.as_millis() as u64
}

/// The config file. Every key except `backend` is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: Option<BackendConfig>,
    pub src_lang: String,
    pub tgt_lang: String,
    pub m: usize,
    pub l: usize,
    pub n: usize,
    pub k: usize,
    pub window: usize,
    pub model: String,
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub checkpoint_interval: usize,
    pub match_mode: MatchMode,
    pub use_records: bool,
    pub summary_query: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let agent = AgentConfig::default();
        Self {
            backend: None,
            src_lang: agent.langs.src,
            tgt_lang: agent.langs.tgt,
            m: agent.summary_interval,
            l: agent.long_term_capacity,
            n: agent.retrieve_count,
            k: agent.short_term_capacity,
            window: docmt_core::baselines::DEFAULT_WINDOW,
            model: agent.generation.model,
            max_new_tokens: agent.generation.max_new_tokens,
            temperature: agent.generation.temperature,
            checkpoint_interval: agent.checkpoint_interval,
            match_mode: agent.match_mode,
            use_records: agent.use_records,
            summary_query: agent.summary_query,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        if let Some(BackendConfig::Scripted { script }) = &mut cfg.backend {
            if script.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                *script = base.join(&*script);
            }
        }
        Ok(cfg)
    }

    pub fn agent(&self) -> AgentConfig {
        AgentConfig {
            summary_interval: self.m,
            long_term_capacity: self.l,
            retrieve_count: self.n,
            short_term_capacity: self.k,
            langs: LanguagePair::new(&self.src_lang, &self.tgt_lang),
            generation: self.generation(),
            checkpoint_interval: self.checkpoint_interval,
            match_mode: self.match_mode,
            use_records: self.use_records,
            summary_query: self.summary_query.clone(),
        }
    }

    pub fn generation(&self) -> GenerationSettings {
        GenerationSettings {
            model: self.model.clone(),
            max_new_tokens: self.max_new_tokens,
            temperature: self.temperature,
        }
    }

    pub fn build_backend(&self) -> Result<Box<dyn ChatBackend>, String> {
        match &self.backend {
            None => Err("config has no \"backend\" section".into()),
            Some(BackendConfig::Openai {
                base_url,
                timeout_secs,
                max_attempts,
                initial_backoff_ms,
            }) => {
                if *max_attempts == 0 {
                    return Err("max_attempts must be >= 1".into());
                }
                let retry = RetryPolicy {
                    max_attempts: *max_attempts,
                    initial_delay: Duration::from_millis(*initial_backoff_ms),
                    ..RetryPolicy::default()
                };
                Ok(Box::new(HttpBackend::from_env(
                    base_url,
                    Duration::from_secs(*timeout_secs),
                    retry,
                )))
            }
            Some(BackendConfig::Scripted { script }) => {
                let text = std::fs::read_to_string(script).map_err(|e| format!("{}: {e}", script.display()))?;
                let script: Script =
                    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", script.display()))?;
                Ok(Box::new(ScriptedBackend::from_script(script)))
            }
        }
    }
}
