"""Stage orchestration: from logs (simulated or ingested) through model
training, counterfactual synthesis, retraining, and evaluation reports.

Every stage reads and writes files under the config's output directory so
stages can be run independently; a missing upstream artifact raises a
DependencyError naming the stage to run first.  All artifacts are pure
functions of (config, seed), so identical runs are bitwise identical.
"""

from __future__ import annotations

import json
import os

from . import augment as aug
from . import data as datamod
from . import diffusion as diff
from . import metrics as met
from . import scm as scmmod
from . import simulator as sim
from . import sr as srmod
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .errors import ConfigError, DependencyError
from .nn import ParamStore

STAGES = ("simulate-log", "train-diffusion", "train-scm", "train-sr",
          "augment", "eval-offline", "eval-online")


class Pipeline:
    def __init__(self, cfg: ExperimentConfig, seed: int | None = None,
                 out_dir: str | None = None):
        self.cfg = cfg
        self.seed = cfg.seed if seed is None else seed
        self.out = out_dir or cfg.out_dir
        os.makedirs(self.out, exist_ok=True)

    # -- paths ------------------------------------------------------------

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def _require(self, name: str, produced_by: str) -> str:
        p = self.path(name)
        if not os.path.exists(p):
            raise DependencyError(f"missing artifact {name!r}; run {produced_by!r} first")
        return p

    def _stamp(self, obj: dict) -> dict:
        obj["config_fingerprint"] = self.cfg.fingerprint()
        obj["seed"] = self.seed
        return obj

    def _write_report(self, stage: str, obj: dict, title: str):
        obj = self._stamp(obj)
        with open(self.path(f"report-{stage}.json"), "w") as fh:
            json.dump(obj, fh, sort_keys=True, indent=1)
            fh.write("\n")
        with open(self.path(f"report-{stage}.txt"), "w") as fh:
            fh.write(met.format_report_txt(obj, title))

    # -- shared loaders ---------------------------------------------------

    def world(self) -> sim.World:
        s = self.cfg.simulator
        wc = sim.WorldConfig(
            n_items=s.n_items, train_mixture=list(s.train_mixture),
            eval_mixture=list(s.eval_mixture), mu_high=s.mu_high, mu_low=s.mu_low,
            affinity_noise=s.affinity_noise, tau=s.tau, u_noclick=s.u_noclick,
            session_length=s.session_length, slate_size=s.slate_size)
        return sim.init_world(wc, self.seed)

    def n_items(self) -> int:
        meta = self._load_meta()
        return meta["n_items"]

    def _load_meta(self) -> dict:
        with open(self._require("dataset.json", "simulate-log"), "r") as fh:
            return json.load(fh)

    def observed(self) -> list[datamod.SlateInteraction]:
        return datamod.read_slate_log_jsonl(self._require("observed.jsonl", "simulate-log"))

    def train_sessions(self) -> list[datamod.ClickSession]:
        return datamod.read_sessions_jsonl(self._require("train.jsonl", "simulate-log"))

    def pop(self) -> datamod.PopularityTable:
        return datamod.popularity_stats(self.train_sessions(), self.n_items())

    # -- stages -----------------------------------------------------------

    def simulate_log(self):
        """Produce the observed data: slate log plus click-session splits."""
        if self.cfg.mode == "simulator":
            world = self.world()
            log = sim.run_logging_policy(world, self.cfg.simulator.n_log_sessions,
                                         self.seed)
            datamod.write_slate_log_jsonl(log, self.path("observed.jsonl"))
            sessions = aug.observed_click_sessions(log)
            n_items = self.cfg.simulator.n_items
            # chronological order is episode order here
            n = len(sessions)
            n_train = max(int(round(0.9 * n)), 1)
            n_valid = max(int(round(0.05 * n)), 1)
            split = datamod.DatasetSplit(sessions[:n_train],
                                         sessions[n_train:n_train + n_valid],
                                         sessions[n_train + n_valid:])
        else:
            d = self.cfg.data
            if d.csv_path:
                raw = datamod.parse_click_log(d.csv_path, d.iso_timestamps)
            else:
                raw = datamod.read_sessions_jsonl(d.sessions_path)
            filtered, catalog = datamod.filter_sessions(raw, d.top_m, d.min_len, d.max_len)
            split = datamod.chronological_split(filtered, tuple(d.fractions))
            n_items = catalog.n_items
            with open(self.path("catalog.json"), "w") as fh:
                json.dump({"dense_to_orig": catalog.dense_to_orig}, fh, sort_keys=True)
            pop = datamod.popularity_stats(split.train, n_items)
            log = datamod.build_slate_log(split.train, d.slate_size, pop, self.seed)
            datamod.write_slate_log_jsonl(log, self.path("observed.jsonl"))
        datamod.write_sessions_jsonl(split.train, self.path("train.jsonl"))
        datamod.write_sessions_jsonl(split.valid, self.path("valid.jsonl"))
        datamod.write_sessions_jsonl(split.test, self.path("test.jsonl"))
        with open(self.path("dataset.json"), "w") as fh:
            json.dump(self._stamp({"n_items": n_items, "mode": self.cfg.mode,
                                   "n_train": len(split.train),
                                   "n_valid": len(split.valid),
                                   "n_test": len(split.test),
                                   "n_interactions": len(log)}),
                      fh, sort_keys=True)
            fh.write("\n")

    def train_diffusion(self):
        model = diff.train_diffusion(self.train_sessions(), self.n_items(),
                                     self.cfg.diffusion, self.seed)
        save_checkpoint(model.store, self.path("diffusion.ckpt"))

    def load_diffusion(self) -> diff.DiffusionModel:
        store = load_checkpoint(self._require("diffusion.ckpt", "train-diffusion"))
        return diff.DiffusionModel(store, self.cfg.diffusion)

    def train_scm(self):
        store = scmmod.train_scm(self.observed(), self.n_items(), self.cfg.scm,
                                 self.seed)
        save_checkpoint(store, self.path("scm.ckpt"))

    def load_scm(self) -> ParamStore:
        return load_checkpoint(self._require("scm.ckpt", "train-scm"))

    def train_sr(self):
        """Baseline recommender; also the augmented one if counterfactuals exist."""
        train = self.train_sessions()
        valid = datamod.read_sessions_jsonl(self._require("valid.jsonl", "simulate-log"))
        valid = [s for s in valid if len(s.items) >= 2]
        store = srmod.train_sr(train, self.n_items(), self.cfg.sr, self.seed,
                               valid_sessions=valid or None)
        save_checkpoint(store, self.path("sr-baseline.ckpt"))
        if os.path.exists(self.path("counterfactuals.jsonl")):
            extra = aug.read_counterfactuals_jsonl(self.path("counterfactuals.jsonl"))
            cf_sessions = [datamod.ClickSession(session_id=len(train) + i, items=c.items,
                                                timestamps=list(range(len(c.items))))
                           for i, c in enumerate(extra)]
            store2 = srmod.train_sr(train + cf_sessions, self.n_items(), self.cfg.sr,
                                    self.seed, valid_sessions=valid or None)
            save_checkpoint(store2, self.path("sr-dcasr.ckpt"))

    def augment(self):
        observed = self.observed()
        model = self.load_diffusion()
        scm_store = self.load_scm()
        a = self.cfg.augment
        n_attempts = a.n_attempts if a.n_attempts is not None else len(observed)
        if a.slate_size is not None:
            slate_size = a.slate_size
        else:
            slate_size = (self.cfg.simulator.slate_size if self.cfg.mode == "simulator"
                          else self.cfg.data.slate_size)
        config = aug.AugmentConfig(n_attempts=n_attempts, guidance_w=a.guidance_w,
                                   slate_size=slate_size, min_length=a.min_length,
                                   beta_mode=a.beta_mode, seed=self.seed)
        sched = diff.make_schedule(self.cfg.diffusion.T, self.cfg.diffusion.beta_1,
                                   self.cfg.diffusion.beta_T)
        result = aug.synthesize_counterfactuals(observed, model, sched, scm_store, config)
        aug.write_counterfactuals_jsonl(result, self.path("counterfactuals.jsonl"))
        self._write_report("augment", {
            "attempts": result.attempts,
            "kept": len(result.sessions),
            "skipped_clickless": result.skipped_clickless,
            "mean_length": (sum(len(c.items) for c in result.sessions)
                            / max(len(result.sessions), 1)),
        }, "counterfactual synthesis")

    def eval_offline(self):
        test = datamod.read_sessions_jsonl(self._require("test.jsonl", "simulate-log"))
        pop = self.pop()
        K = self.cfg.eval.K
        out = {}
        for tag, ckpt in (("baseline", "sr-baseline.ckpt"), ("dcasr", "sr-dcasr.ckpt")):
            if tag == "baseline":
                store = load_checkpoint(self._require(ckpt, "train-sr"))
            elif os.path.exists(self.path(ckpt)):
                store = load_checkpoint(self.path(ckpt))
            else:
                continue
            rep = met.evaluate_offline(store, self.cfg.sr, test, K, pop)
            out[tag] = rep.as_dict()
        self._write_report("eval-offline", {"models": out, "K": K}, "offline evaluation")

    def eval_online(self):
        if self.cfg.mode != "simulator":
            raise ConfigError("eval-online requires simulator mode")
        world = self.world()
        pop = self.pop()
        K = self.cfg.simulator.slate_size
        out = {}
        for tag, ckpt in (("baseline", "sr-baseline.ckpt"), ("dcasr", "sr-dcasr.ckpt")):
            if tag == "baseline":
                store = load_checkpoint(self._require(ckpt, "train-sr"))
            elif os.path.exists(self.path(ckpt)):
                store = load_checkpoint(self.path(ckpt))
            else:
                continue
            agent = srmod.make_agent(store, self.cfg.sr, K, pop)
            rep = sim.run_online_eval(world, agent, self.cfg.simulator.n_eval_sessions,
                                      self.cfg.simulator.eval_mixture, pop,
                                      self.seed + 1)
            out[tag] = {"ctr": rep.ctr, "arp": rep.arp,
                        "session_click_rate": rep.session_click_rate,
                        "per_type": {str(t): v for t, v in rep.per_type.items()},
                        "n_sessions": rep.n_sessions, "n_steps": rep.n_steps}
        self._write_report("eval-online", {"models": out}, "online evaluation")

    # -- orchestration ----------------------------------------------------

    def run(self, stage: str):
        dispatch = {
            "simulate-log": self.simulate_log,
            "train-diffusion": self.train_diffusion,
            "train-scm": self.train_scm,
            "train-sr": self.train_sr,
            "augment": self.augment,
            "eval-offline": self.eval_offline,
            "eval-online": self.eval_online,
        }
        if stage == "run-all":
            self.simulate_log()
            self.train_diffusion()
            self.train_scm()
            self.augment()
            self.train_sr()
            self.eval_offline()
            if self.cfg.mode == "simulator":
                self.eval_online()
            return
        if stage not in dispatch:
            raise ConfigError(f"unknown stage {stage!r}; one of {STAGES + ('run-all',)}")
        dispatch[stage]()


def run_pipeline(cfg: ExperimentConfig, mode: str, seed: int | None = None,
                 out_dir: str | None = None) -> Pipeline:
    p = Pipeline(cfg, seed=seed, out_dir=out_dir)
    p.run(mode)
    return p
