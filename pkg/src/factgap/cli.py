"""Command-line pipeline: gen -> query -> extract -> classify -> temporal /
regress -> report, plus the packaged recommendation and soccer studies.

Stages communicate through files (prompts/responses/answers JSONL, outcomes
CSV), so the expensive query stage is cached and every analysis step can be
re-run offline. A JSON run configuration may supply any option; flags
override file values. Exit codes: 0 success, 2 config error, 3 transport
error, 4 analysis error.
"""
from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from . import analytics, extract as extract_mod, figures, glmfit, ingest, llmgate, promptgen
from .errors import ConfigError, DataError, FactgapError, TransportError
from .outcome import OUTCOMES_HEADER, classify_batch, outcome_to_row, outcomes_from_csv
from .storage import read_jsonl, write_csv, write_jsonl

EXIT_CONFIG = 2
EXIT_TRANSPORT = 3
EXIT_ANALYSIS = 4


def pipeline_command(func):
    """Map toolkit errors onto the documented exit codes."""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(EXIT_CONFIG)
        except TransportError as exc:
            click.echo(f"transport error: {exc}", err=True)
            sys.exit(EXIT_TRANSPORT)
        except FactgapError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_ANALYSIS)

    return wrapper


def load_run_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        with open(p, encoding="utf-8") as fh:
            config = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(config, dict):
        raise ConfigError("config file must hold a JSON object")
    return config


def pick(flag_value, config: dict, key: str, default=None):
    """Flags override the config file, which overrides the default."""
    if flag_value is not None:
        return flag_value
    node = config
    for part in key.split("."):
        if not isinstance(node, dict) or part not in node:
            return default
        node = node[part]
    return node


def require(value, name: str):
    if value is None:
        raise ConfigError(f"missing required option {name}")
    return value


def existing_path(value, name: str) -> Path:
    path = Path(require(value, name))
    if not path.exists():
        raise ConfigError(f"{name} file not found: {path}")
    return path


def parse_year_range(text: str) -> tuple[int, int]:
    try:
        start, end = text.split(":")
        return int(start), int(end)
    except ValueError:
        raise ConfigError(f"expected year range START:END, got {text!r}") from None


def parse_thresholds(value) -> list[float]:
    try:
        if isinstance(value, str):
            values = [float(t) for t in value.split(",") if t]
        else:
            values = [float(t) for t in value]
    except (TypeError, ValueError):
        raise ConfigError(f"bad threshold list {value!r}") from None
    if values != sorted(set(values)) or not all(0 < t < 1 for t in values):
        raise ConfigError(f"thresholds must be strictly increasing in (0,1), got {values}")
    return values


def covariate_names_from(x_flag, config: dict) -> list[str]:
    """--x flags win; the config's regress.x may be a string or a list."""
    if x_flag:
        return list(x_flag)
    xs = pick(None, config, "regress.x")
    if xs is None:
        return []
    return [xs] if isinstance(xs, str) else list(xs)


def query_params_from(config: dict, model, endpoint, temperature, max_tokens, api_key_env):
    return llmgate.QueryParams(
        model=require(pick(model, config, "query.model"), "--model"),
        endpoint=require(pick(endpoint, config, "query.endpoint"), "--endpoint"),
        temperature=pick(temperature, config, "query.temperature", 0.0),
        max_tokens=pick(max_tokens, config, "query.max_tokens", 100),
        api_key_env=pick(api_key_env, config, "query.api_key_env", "LLM_API_KEY"),
    )


def retry_options(config: dict) -> dict:
    return {"max_attempts": pick(None, config, "query.max_attempts", 5),
            "backoff_base": pick(None, config, "query.backoff_base", 0.5)}


def load_oracle_profile(path: str) -> llmgate.OracleProfile:
    p = existing_path(path, "--mock profile")
    try:
        with open(p, encoding="utf-8") as fh:
            return llmgate.OracleProfile.from_dict(json.load(fh))
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise ConfigError(f"bad oracle profile {p}: {exc}") from None


def facts_by_prompt(prompts, facts) -> dict[str, ingest.FactRecord]:
    by_key = {(f.entity_id, f.year): f for f in facts}
    out = {}
    for p in prompts:
        fact = by_key.get((p.entity_id, p.year))
        if fact is not None:
            out[p.prompt_id] = fact
    return out


@click.group()
@click.version_option()
def main():
    """Measure temporal and cross-sectional knowledge gaps of LLMs."""


# ---------------------------------------------------------------- gen

@main.command()
@click.option("--config", "config_path", default=None, help="JSON run configuration.")
@click.option("--facts", default=None, help="Facts CSV.")
@click.option("--template", "template_id", default=None,
              help="Template id (revenue, soccer) or a literal template string.")
@click.option("--sample", "scheme", default=None,
              type=click.Choice(["full", "stratified", "intersection"]))
@click.option("--per-cell", type=int, default=None, help="Stratified cell size.")
@click.option("--stratify-by", default=None, help="Covariate to bucketize for stratification.")
@click.option("--covariates", default=None, help="Covariates CSV (needed for stratified).")
@click.option("--factors", default=None, help="Factor levels CSV (league bindings).")
@click.option("--range", "year_range", default=None, help="Intersection range START:END.")
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_path", default=None, help="Prompts JSONL to write.")
@click.option("--dry-run", is_flag=True)
@pipeline_command
def gen(config_path, facts, template_id, scheme, per_cell, stratify_by, covariates,
        factors, year_range, seed, out_path, dry_run):
    """Render the prompt dataset, optionally sampling it first."""
    config = load_run_config(config_path)
    facts_path = existing_path(pick(facts, config, "facts"), "--facts")
    records = ingest.load_facts(facts_path, schema=config.get("facts_schema"))

    template_id = pick(template_id, config, "template_id", "revenue")
    template = promptgen.TEMPLATES.get(template_id, template_id)
    if "{" not in template:
        raise ConfigError(f"unknown template id {template_id!r}")

    scheme = pick(scheme, config, "sample.scheme", "full")
    seed = pick(seed, config, "seed", 0)
    if scheme == "stratified":
        per_cell = pick(per_cell, config, "sample.per_cell", 50)
        cov_name = require(pick(stratify_by, config, "sample.stratify_by"), "--stratify-by")
        cov_path = existing_path(pick(covariates, config, "covariates"), "--covariates")
        cov_values = ingest.load_covariates(cov_path)
        joined = ingest.join_covariates(records, cov_values, cov_name)
        if joined.dropped:
            click.echo(f"stratify: dropped {joined.dropped} facts without {cov_name!r}", err=True)
        pairs = [(fact, ingest.bucketize_logmcap(value)) for fact, value in joined.pairs]
        sample = promptgen.sample_stratified(pairs, per_cell=per_cell, seed=seed)
        for (year, bucket), missing in sorted(sample.shortfalls.items()):
            click.echo(f"stratify: cell ({year}, {bucket}) short by {missing}", err=True)
        selected = sample.records
    elif scheme == "intersection":
        span_value = require(pick(year_range, config, "sample.year_range"), "--range")
        span = parse_year_range(span_value) if isinstance(span_value, str) \
            else (int(span_value[0]), int(span_value[1]))
        selected = promptgen.sample_intersection(records, span)
    else:
        selected = records

    extra_by_key = None
    if "{league}" in template:
        factors_path = existing_path(pick(factors, config, "factors"), "--factors")
        leagues = ingest.load_factor_levels(factors_path, name="league")
        extra_by_key = {key: {"league": level} for key, level in leagues.items()}

    if dry_run:
        click.echo(f"gen: would write {len(selected)} prompts (scheme={scheme})")
        return
    out_path = Path(pick(out_path, config, "prompts", "prompts.jsonl"))
    prompts = promptgen.build_dataset(selected, template, template_id=template_id,
                                      extra_by_key=extra_by_key)
    n = write_jsonl(out_path, promptgen.prompts_to_dicts(prompts))
    click.echo(f"gen: wrote {n} prompts to {out_path}")


# ---------------------------------------------------------------- query

@main.command()
@click.option("--config", "config_path", default=None)
@click.option("--prompts", "prompts_path", default=None, help="Prompts JSONL.")
@click.option("--out", "out_path", default=None, help="Responses JSONL.")
@click.option("--model", default=None)
@click.option("--endpoint", default=None)
@click.option("--temperature", type=float, default=None)
@click.option("--max-tokens", type=int, default=None)
@click.option("--api-key-env", default=None)
@click.option("--parallelism", type=int, default=None)
@click.option("--cache-dir", default=None)
@click.option("--mock", "mock_profile", default=None,
              help="Oracle profile JSON; answers offline instead of an endpoint.")
@click.option("--facts", default=None, help="Facts CSV (required with --mock).")
@click.option("--covariates", default=None, help="Covariates CSV (required with --mock).")
@click.option("--covariate", "covariate_name", default=None,
              help="Covariate the mock oracle conditions on.")
@click.option("--style", type=click.Choice(["money", "points"]), default=None)
@click.option("--dry-run", is_flag=True)
@pipeline_command
def query(config_path, prompts_path, out_path, model, endpoint, temperature, max_tokens,
          api_key_env, parallelism, cache_dir, mock_profile, facts, covariates,
          covariate_name, style, dry_run):
    """Send prompts to the endpoint (or the mock oracle), resumably."""
    config = load_run_config(config_path)
    prompts_file = existing_path(pick(prompts_path, config, "prompts"), "--prompts")
    prompts = promptgen.prompts_from_dicts(read_jsonl(prompts_file))
    out_path = Path(pick(out_path, config, "responses", "responses.jsonl"))

    existing: dict[str, dict] = {}
    if out_path.exists():
        for record in read_jsonl(out_path):
            existing[record["prompt_id"]] = record
    missing = [p for p in prompts if p.prompt_id not in existing]

    mock_profile = pick(mock_profile, config, "query.mock_profile")
    if dry_run:
        mode = "mock" if mock_profile else "endpoint"
        click.echo(f"query: {len(prompts)} prompts, {len(existing)} already answered, "
                   f"{len(missing)} to issue via {mode}")
        return

    if mock_profile:
        profile = load_oracle_profile(mock_profile)
        facts_path = existing_path(pick(facts, config, "facts"), "--facts")
        cov_path = existing_path(pick(covariates, config, "covariates"), "--covariates")
        cov_name = require(pick(covariate_name, config, "query.covariate"), "--covariate")
        threshold = pick(None, config, "threshold", 0.10)
        answer_style = pick(style, config, "query.style", "money")
        fact_records = ingest.load_facts(facts_path, schema=config.get("facts_schema"))
        truths = facts_by_prompt(prompts, fact_records)
        cov_map = ingest.covariate_map(ingest.load_covariates(cov_path), cov_name)
        for prompt in missing:
            truth = truths.get(prompt.prompt_id)
            if truth is None:
                raise DataError(f"no fact for prompt {prompt.prompt_id} "
                                f"({prompt.entity_id}, {prompt.year})")
            key = (prompt.entity_id, prompt.year)
            if key not in cov_map:
                raise DataError(f"no covariate {cov_name!r} for {key}")
            response = llmgate.mock_complete(profile, prompt, truth, cov_map[key],
                                             threshold=threshold, style=answer_style)
            existing[prompt.prompt_id] = response.to_dict()
    elif missing:
        params = query_params_from(config, model, endpoint, temperature, max_tokens,
                                   api_key_env)
        cache_dir = pick(cache_dir, config, "query.cache_dir")
        cache = llmgate.ResponseCache(cache_dir) if cache_dir else None
        pool = pick(parallelism, config, "query.parallelism", 4)
        result = llmgate.complete_batch(params, missing, parallelism=pool, cache=cache,
                                        **retry_options(config))
        for response in result.responses:
            existing[response.prompt_id] = response.to_dict()
        for err in result.errors:
            click.echo(f"query: prompt {err.prompt_id} failed: {err.error}", err=True)
        if result.errors and not result.responses:
            raise TransportError(f"all {len(result.errors)} requests failed; "
                                 f"first: {result.errors[0].error}")

    ordered = [existing[p.prompt_id] for p in prompts if p.prompt_id in existing]
    n = write_jsonl(out_path, ordered)
    answered = sum(1 for p in prompts if p.prompt_id in existing)
    click.echo(f"query: {answered}/{len(prompts)} answered; wrote {n} responses to {out_path}")


# ---------------------------------------------------------------- extract

@main.command("extract")
@click.option("--config", "config_path", default=None)
@click.option("--responses", "responses_path", default=None)
@click.option("--out", "out_path", default=None, help="Answers JSONL.")
@click.option("--mode", type=click.Choice(["money", "points"]), default=None)
@click.option("--dry-run", is_flag=True)
@pipeline_command
def extract_cmd(config_path, responses_path, out_path, mode, dry_run):
    """Parse raw response text into normalized numeric answers."""
    config = load_run_config(config_path)
    responses_file = existing_path(pick(responses_path, config, "responses"), "--responses")
    mode = pick(mode, config, "extract_mode", "money")
    records = list(read_jsonl(responses_file))
    if dry_run:
        click.echo(f"extract: would parse {len(records)} responses (mode={mode})")
        return
    parse = extract_mod.extract_money if mode == "money" else extract_mod.extract_points
    answers = [parse(r["raw_text"], prompt_id=r["prompt_id"]) for r in records]
    out_path = Path(pick(out_path, config, "answers", "answers.jsonl"))
    n = write_jsonl(out_path, (extract_mod.answer_to_dict(a) for a in answers))
    refusals = sum(1 for a in answers if a.refusal)
    click.echo(f"extract: wrote {n} answers ({refusals} refusals) to {out_path}")


# ---------------------------------------------------------------- classify

@main.command()
@click.option("--config", "config_path", default=None)
@click.option("--answers", "answers_path", default=None)
@click.option("--prompts", "prompts_path", default=None)
@click.option("--facts", default=None)
@click.option("--threshold", type=float, default=None)
@click.option("--out", "out_path", default=None, help="Outcomes CSV.")
@click.option("--dry-run", is_flag=True)
@pipeline_command
def classify(config_path, answers_path, prompts_path, facts, threshold, out_path, dry_run):
    """Assign the ternary outcome to every answered prompt."""
    config = load_run_config(config_path)
    answers_file = existing_path(pick(answers_path, config, "answers"), "--answers")
    prompts_file = existing_path(pick(prompts_path, config, "prompts"), "--prompts")
    facts_path = existing_path(pick(facts, config, "facts"), "--facts")
    threshold = pick(threshold, config, "threshold", 0.10)

    answers = [extract_mod.answer_from_dict(r) for r in read_jsonl(answers_file)]
    prompts = promptgen.prompts_from_dicts(read_jsonl(prompts_file))
    fact_records = ingest.load_facts(facts_path, schema=config.get("facts_schema"))
    truths = facts_by_prompt(prompts, fact_records)

    if dry_run:
        click.echo(f"classify: would classify {len(answers)} answers at threshold {threshold}")
        return
    result = classify_batch(truths, answers, threshold)
    for pid in result.unresolved:
        click.echo(f"classify: unresolved prompt_id {pid}", err=True)
    out_path = Path(pick(out_path, config, "outcomes", "outcomes.csv"))
    write_csv(out_path, OUTCOMES_HEADER, (outcome_to_row(o) for o in result.outcomes))
    click.echo(f"classify: wrote {len(result.outcomes)} outcomes to {out_path} "
               f"({len(result.unresolved)} unresolved)")


# ---------------------------------------------------------------- temporal

@main.command()
@click.option("--config", "config_path", default=None)
@click.option("--outcomes", "outcomes_path", default=None)
@click.option("--answers", "answers_path", default=None,
              help="With --thresholds: re-classify from answers for the sweep.")
@click.option("--prompts", "prompts_path", default=None)
@click.option("--facts", default=None)
@click.option("--thresholds", default=None, help="Comma list, e.g. 0.05,0.10,0.20.")
@click.option("--out", "out_path", default=None, help="Rates CSV.")
@click.option("--dry-run", is_flag=True)
@pipeline_command
def temporal(config_path, outcomes_path, answers_path, prompts_path, facts, thresholds,
             out_path, dry_run):
    """Success/hallucination rate curves by year, optionally swept over thresholds."""
    config = load_run_config(config_path)
    thresholds = pick(thresholds, config, "thresholds")
    out_path = Path(pick(out_path, config, "rates", "rates.csv"))

    if thresholds:
        sweep = parse_thresholds(thresholds)
        answers_file = existing_path(pick(answers_path, config, "answers"), "--answers")
        prompts_file = existing_path(pick(prompts_path, config, "prompts"), "--prompts")
        facts_path = existing_path(pick(facts, config, "facts"), "--facts")
        answers = [extract_mod.answer_from_dict(r) for r in read_jsonl(answers_file)]
        prompts = promptgen.prompts_from_dicts(read_jsonl(prompts_file))
        truths = facts_by_prompt(prompts, ingest.load_facts(facts_path,
                                                            schema=config.get("facts_schema")))
        if dry_run:
            click.echo(f"temporal: would sweep {len(answers)} answers over {sweep}")
            return
        curves = analytics.threshold_sweep(truths, answers, sweep)
        rates = [r for t in sweep for r in curves[t]]
    else:
        outcomes_file = existing_path(pick(outcomes_path, config, "outcomes"), "--outcomes")
        outcomes = outcomes_from_csv(outcomes_file)
        if dry_run:
            click.echo(f"temporal: would aggregate {len(outcomes)} outcomes")
            return
        rates = analytics.rates_by_year(outcomes)

    write_csv(out_path, analytics.RATES_HEADER,
              ([r.year, r.n, r.success_rate, r.hallucination_rate, r.stderr_success,
                r.threshold] for r in rates))
    click.echo(f"temporal: wrote {len(rates)} year rows to {out_path}")


# ---------------------------------------------------------------- regress

def run_regression(outcomes, covariates_path, x_names, target, fixed, factors_path,
                   reference_levels, facts_schema=None):
    cov_values = ingest.load_covariates(covariates_path)
    cov_maps = {name: ingest.covariate_map(cov_values, name) for name in x_names}
    factor_values = {}
    for factor in fixed:
        if factor == "year":
            continue
        if factors_path is None:
            raise ConfigError(f"factor {factor!r} needs --factors")
        factor_values[factor] = ingest.load_factor_levels(factors_path, name=factor)
    spec = glmfit.RegressionSpec(outcome_target=target, covariate_names=list(x_names),
                                 fixed_effects=list(fixed),
                                 reference_levels=reference_levels or {})
    design = glmfit.build_design(outcomes, cov_maps, spec, factor_values)
    return glmfit.fit_logit(design)


def parse_reference_levels(pairs: tuple[str, ...]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"expected FACTOR=LEVEL, got {pair!r}")
        factor, level = pair.split("=", 1)
        out[factor] = level
    return out


@main.command()
@click.option("--config", "config_path", default=None)
@click.option("--outcomes", "outcomes_path", default=None)
@click.option("--covariates", default=None)
@click.option("--x", "x_names", multiple=True, help="Covariate name (repeatable).")
@click.option("--target", type=click.Choice(["success", "hallucination"]), default=None)
@click.option("--fixed", default=None, help="Comma list of fixed effects, e.g. year,league.")
@click.option("--factors", default=None, help="Factor levels CSV for non-year factors.")
@click.option("--reference", multiple=True, help="FACTOR=LEVEL reference override.")
@click.option("--out", "out_path", default=None, help="Fit report JSON.")
@click.option("--dry-run", is_flag=True)
@pipeline_command
def regress(config_path, outcomes_path, covariates, x_names, target, fixed, factors,
            reference, out_path, dry_run):
    """Fixed-effects logistic regression on the classified outcomes."""
    config = load_run_config(config_path)
    outcomes_file = existing_path(pick(outcomes_path, config, "outcomes"), "--outcomes")
    covariates_path = existing_path(pick(covariates, config, "covariates"), "--covariates")
    x_names = covariate_names_from(x_names, config)
    if not x_names:
        raise ConfigError("missing required option --x")
    target = pick(target, config, "regress.target", "success")
    fixed = [f for f in pick(fixed, config, "regress.fixed", "year").split(",") if f]
    factors_path = pick(factors, config, "factors")
    if factors_path is not None:
        factors_path = existing_path(factors_path, "--factors")
    reference_levels = parse_reference_levels(reference)

    outcomes = outcomes_from_csv(outcomes_file)
    if dry_run:
        click.echo(f"regress: would fit {target} ~ {'+'.join(x_names)} "
                   f"+ FE({','.join(fixed)}) on {len(outcomes)} outcomes")
        return
    fit = run_regression(outcomes, covariates_path, x_names, target, fixed,
                         factors_path, reference_levels)
    out_path = Path(pick(out_path, config, "fits", "fit.json"))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(json.dumps(glmfit.fit_to_dict(fit), indent=2, ensure_ascii=False) + "\n",
                        encoding="utf-8")
    click.echo(glmfit.format_fit_table(fit, title=f"{target} ~ {' + '.join(x_names)} "
                                                  f"+ FE({', '.join(fixed)})"))
    click.echo(f"regress: wrote fit to {out_path}")


# ---------------------------------------------------------------- report

@main.command()
@click.option("--config", "config_path", default=None)
@click.option("--outcomes", "outcomes_path", default=None)
@click.option("--covariates", default=None)
@click.option("--x", "x_name", default=None, help="Covariate for tallies and regressions.")
@click.option("--fixed", default=None)
@click.option("--factors", default=None)
@click.option("--out-dir", default=None)
@click.option("--marker-year", type=int, default=None, help="Dotted vertical line in figures.")
@click.option("--no-figures", is_flag=True, help="Skip PNG rendering.")
@click.option("--dry-run", is_flag=True)
@pipeline_command
def report(config_path, outcomes_path, covariates, x_name, fixed, factors, out_dir,
           marker_year, no_figures, dry_run):
    """Emit rates.csv, tallies.csv, fits.json, summary.txt and figures."""
    config = load_run_config(config_path)
    outcomes_file = existing_path(pick(outcomes_path, config, "outcomes"), "--outcomes")
    outcomes = outcomes_from_csv(outcomes_file)
    out_dir = Path(pick(out_dir, config, "out_dir", "report"))
    if x_name is None:
        names = covariate_names_from((), config)
        x_name = names[0] if names else None

    if dry_run:
        click.echo(f"report: would aggregate {len(outcomes)} outcomes into {out_dir}")
        return

    rates = analytics.rates_by_year(outcomes)
    cov_map = {}
    fits = {}
    if x_name is not None:
        covariates_path = existing_path(pick(covariates, config, "covariates"), "--covariates")
        cov_values = ingest.load_covariates(covariates_path)
        cov_map = ingest.covariate_map(cov_values, x_name)
        fixed_list = [f for f in pick(fixed, config, "regress.fixed", "year").split(",") if f]
        factors_path = pick(factors, config, "factors")
        if factors_path is not None:
            factors_path = existing_path(factors_path, "--factors")
        for target in ("success", "hallucination"):
            try:
                fits[f"{target}~{x_name}"] = run_regression(
                    outcomes, covariates_path, [x_name], target, fixed_list, factors_path, {})
            except FactgapError as exc:
                click.echo(f"report: {target} regression skipped: {exc}", err=True)
    tallies = analytics.tally_entities(outcomes, cov_map)

    written = analytics.emit_report(rates, tallies, fits, out_dir)
    if not no_figures:
        written += figures.render_report_figures(rates, tallies, out_dir,
                                                 marker_year=pick(marker_year, config,
                                                                  "marker_year"))
    for path in written:
        click.echo(f"report: wrote {path}")


# ---------------------------------------------------------------- reco

@main.command()
@click.option("--config", "config_path", default=None)
@click.option("--facts", default=None)
@click.option("--covariates", default=None)
@click.option("--covariate", "covariate_name", default=None)
@click.option("--start-year", type=int, default=None)
@click.option("--end-year", type=int, default=None)
@click.option("--mock", "mock_profile", default=None)
@click.option("--model", default=None)
@click.option("--endpoint", default=None)
@click.option("--temperature", type=float, default=None)
@click.option("--max-tokens", type=int, default=None)
@click.option("--api-key-env", default=None)
@click.option("--cache-dir", default=None)
@click.option("--out-dir", default=None)
@click.option("--dry-run", is_flag=True)
@pipeline_command
def reco(config_path, facts, covariates, covariate_name, start_year, end_year, mock_profile,
         model, endpoint, temperature, max_tokens, api_key_env, cache_dir, out_dir, dry_run):
    """Multi-turn BUY/SELL/DNK study with one-vs-rest regressions."""
    config = load_run_config(config_path)
    facts_path = existing_path(pick(facts, config, "facts"), "--facts")
    cov_path = existing_path(pick(covariates, config, "covariates"), "--covariates")
    cov_name = require(pick(covariate_name, config, "reco.covariate"), "--covariate")
    start = require(pick(start_year, config, "reco.start_year"), "--start-year")
    end = require(pick(end_year, config, "reco.end_year"), "--end-year")
    out_dir = Path(pick(out_dir, config, "out_dir", "reco"))
    mock_profile = pick(mock_profile, config, "reco.mock_profile")

    records = ingest.load_facts(facts_path, schema=config.get("facts_schema"))
    window = promptgen.sample_intersection(records, (start, end))
    by_entity: dict[str, dict[int, float]] = {}
    names: dict[str, str] = {}
    for fact in window:
        by_entity.setdefault(fact.entity_id, {})[fact.year] = fact.value
        names[fact.entity_id] = fact.entity_name
    cov_map = ingest.covariate_map(ingest.load_covariates(cov_path), cov_name)

    usable = [e for e in sorted(by_entity) if (e, end) in cov_map]
    skipped_cov = len(by_entity) - len(usable)
    if dry_run:
        click.echo(f"reco: {len(usable)} entities with {start}-{end} facts and {cov_name!r} "
                   f"({skipped_cov} lacking the covariate)")
        return

    profile = load_oracle_profile(mock_profile) if mock_profile else None
    params = None
    cache = None
    if profile is None:
        params = query_params_from(config, model, endpoint, temperature, max_tokens,
                                   api_key_env)
        cache_dir = pick(cache_dir, config, "query.cache_dir")
        cache = llmgate.ResponseCache(cache_dir) if cache_dir else None

    def reply_for(conv_id, conversation, stage, entity_id):
        if profile is not None:
            return llmgate.mock_reply(profile, stage, names[entity_id],
                                      by_entity[entity_id], cov_map[(entity_id, end)], conv_id)
        return llmgate.complete(params, conversation, prompt_id=conv_id, cache=cache,
                                **retry_options(config)).raw_text

    conversations = []
    labels = []
    unparseable = 0
    for entity_id in usable:
        conv_id = promptgen.conversation_id_for(entity_id, start, end)
        name = names[entity_id]
        conv = promptgen.build_cot_conversation(name, start, end, "history")
        conv = conv.with_assistant(reply_for(conv_id, conv, "history", entity_id))
        conv = promptgen.build_cot_conversation(name, start, end, "forecast", conv)
        conv = conv.with_assistant(reply_for(conv_id, conv, "forecast", entity_id))
        conv = promptgen.build_cot_conversation(name, start, end, "recommend", conv)
        final = reply_for(conv_id, conv, "recommend", entity_id)
        conv = conv.with_assistant(final)
        conversations.append({"conv_id": conv_id, "entity_id": entity_id,
                              "messages": conv.to_payload()})
        try:
            label = extract_mod.parse_recommendation(final).label
        except FactgapError:
            unparseable += 1
            continue
        labels.append((entity_id, label))

    write_jsonl(out_dir / "conversations.jsonl", conversations)
    write_csv(out_dir / "recommendations.csv", ["entity_id", "label"],
              ([e, label] for e, label in labels))

    fits = {}
    cov_table = {cov_name: {(e, end): cov_map[(e, end)] for e, _ in labels}}
    for target_label in ("DNK", "BUY", "SELL"):
        rows = [glmfit.LabeledRow(entity_id=e, year=end,
                                  label=1 if label == target_label else 0)
                for e, label in labels]
        spec = glmfit.RegressionSpec("label", [cov_name], [])
        try:
            fit = glmfit.fit_logit(glmfit.build_design(rows, cov_table, spec))
        except FactgapError as exc:
            click.echo(f"reco: {target_label} fit skipped: {exc}", err=True)
            continue
        fits[target_label] = fit
        click.echo(glmfit.format_fit_table(fit, title=f"{target_label} vs rest ~ {cov_name}"))
    payload = {name: glmfit.fit_to_dict(fit) for name, fit in fits.items()}
    (out_dir / "fits.json").write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n",
                                       encoding="utf-8")
    click.echo(f"reco: {len(labels)} recommendations ({unparseable} unparseable, "
               f"{skipped_cov} without covariate) in {out_dir}")


# ---------------------------------------------------------------- soccer

@main.command()
@click.option("--config", "config_path", default=None)
@click.option("--facts", default=None, help="Points facts CSV.")
@click.option("--covariates", default=None, help="Finishing-position covariate CSV.")
@click.option("--covariate", "covariate_name", default=None, show_default=True)
@click.option("--factors", default=None, help="League levels CSV.")
@click.option("--threshold", type=float, default=None, help="Success threshold (default 0.05).")
@click.option("--mock", "mock_profile", default=None)
@click.option("--model", default=None)
@click.option("--endpoint", default=None)
@click.option("--temperature", type=float, default=None)
@click.option("--max-tokens", type=int, default=None)
@click.option("--api-key-env", default=None)
@click.option("--parallelism", type=int, default=None)
@click.option("--cache-dir", default=None)
@click.option("--out-dir", default=None)
@click.option("--seed", type=int, default=None)
@click.option("--no-figures", is_flag=True)
@click.option("--dry-run", is_flag=True)
@pipeline_command
def soccer(config_path, facts, covariates, covariate_name, factors, threshold, mock_profile,
           model, endpoint, temperature, max_tokens, api_key_env, parallelism, cache_dir,
           out_dir, seed, no_figures, dry_run):
    """Packaged generic-domain study: points questions with a league fixed effect."""
    config = load_run_config(config_path)
    facts_path = existing_path(pick(facts, config, "facts"), "--facts")
    cov_path = existing_path(pick(covariates, config, "covariates"), "--covariates")
    factors_path = existing_path(pick(factors, config, "factors"), "--factors")
    cov_name = pick(covariate_name, config, "soccer.covariate", "position")
    threshold = pick(threshold, config, "threshold", 0.05)
    out_dir = Path(pick(out_dir, config, "out_dir", "soccer"))
    mock_profile = pick(mock_profile, config, "query.mock_profile")

    records = ingest.load_facts(facts_path, schema=config.get("facts_schema"))
    leagues = ingest.load_factor_levels(factors_path, name="league")
    missing_league = [f for f in records if (f.entity_id, f.year) not in leagues]
    if missing_league:
        raise DataError(f"{len(missing_league)} facts lack a league level; "
                        f"first: {(missing_league[0].entity_id, missing_league[0].year)}")
    if dry_run:
        click.echo(f"soccer: would run {len(records)} prompts at threshold {threshold}")
        return

    extra = {key: {"league": level} for key, level in leagues.items()}
    prompts = promptgen.build_dataset(records, promptgen.SOCCER_TEMPLATE,
                                      template_id="soccer", extra_by_key=extra)
    write_jsonl(out_dir / "prompts.jsonl", promptgen.prompts_to_dicts(prompts))

    cov_map = ingest.covariate_map(ingest.load_covariates(cov_path), cov_name)
    truths = facts_by_prompt(prompts, records)
    if mock_profile:
        profile = load_oracle_profile(mock_profile)
        responses = []
        for prompt in prompts:
            key = (prompt.entity_id, prompt.year)
            if key not in cov_map:
                raise DataError(f"no covariate {cov_name!r} for {key}")
            responses.append(llmgate.mock_complete(profile, prompt, truths[prompt.prompt_id],
                                                   cov_map[key], threshold=threshold,
                                                   style="points"))
    else:
        params = query_params_from(config, model, endpoint, temperature, max_tokens,
                                   api_key_env)
        cache_dir = pick(cache_dir, config, "query.cache_dir")
        cache = llmgate.ResponseCache(cache_dir) if cache_dir else None
        pool = pick(parallelism, config, "query.parallelism", 4)
        result = llmgate.complete_batch(params, prompts, parallelism=pool, cache=cache,
                                        **retry_options(config))
        for err in result.errors:
            click.echo(f"soccer: prompt {err.prompt_id} failed: {err.error}", err=True)
        responses = result.responses
    write_jsonl(out_dir / "responses.jsonl", (r.to_dict() for r in responses))

    answers = [extract_mod.extract_points(r.raw_text, prompt_id=r.prompt_id)
               for r in responses]
    write_jsonl(out_dir / "answers.jsonl", (extract_mod.answer_to_dict(a) for a in answers))

    result = classify_batch(truths, answers, threshold)
    write_csv(out_dir / "outcomes.csv", OUTCOMES_HEADER,
              (outcome_to_row(o) for o in result.outcomes))

    rates = analytics.rates_by_year(result.outcomes)
    tallies = analytics.tally_entities(result.outcomes, cov_map)
    fits = {}
    spec = glmfit.RegressionSpec("success", [cov_name], ["year", "league"])
    try:
        design = glmfit.build_design(result.outcomes, {cov_name: cov_map}, spec,
                                     {"league": leagues})
        fit = glmfit.fit_logit(design)
        fits[f"success~{cov_name}+year+league"] = fit
        click.echo(glmfit.format_fit_table(
            fit, title=f"success ~ {cov_name} + FE(year, league)"))
    except FactgapError as exc:
        click.echo(f"soccer: regression skipped: {exc}", err=True)
    analytics.emit_report(rates, tallies, fits, out_dir)
    if not no_figures:
        figures.render_report_figures(rates, tallies, out_dir)
    click.echo(f"soccer: study complete in {out_dir}")


if __name__ == "__main__":
    main()
