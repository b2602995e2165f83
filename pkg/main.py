# -*- coding: utf-8 -*-
"""
QuasiCause 命令行入口

子命令:
    run       执行完整流水线 (全部 处理变量 × α × 子人群 组合)
    simulate  生成合成数据集
    stage     只执行单个阶段 (cluster | label | featurize | screen)
    validate  输出数据集覆盖情况报告
"""
import argparse
import json
import logging
import sys
from typing import List, Optional

from dotenv import load_dotenv

from src.config import load_sim_config, load_study_config
from src.errors import QuasiCauseError
from src.logging_config import setup_logging
from src.pipeline import STAGES, QuasiCauseEngine
from src.simulate import generate, write_simulation

logger = logging.getLogger("quasicause")


def _overrides(args) -> dict:
    return {
        "seed": getattr(args, "seed", None),
        "output_dir": getattr(args, "output_dir", None),
        "threads": getattr(args, "threads", None),
        "force": True if getattr(args, "force", False) else None,
    }


def cmd_run(args) -> int:
    config = load_study_config(args.config, _overrides(args))
    report = QuasiCauseEngine(config).run()
    n_ok = sum(1 for s in report["studies"] if s["status"] == "ok")
    print(f"✅ 流水线完成: {n_ok}/{len(report['studies'])} 个研究已估计, 结果目录 {config.output_dir}")
    return 0


def cmd_simulate(args) -> int:
    sim_cfg, output = load_sim_config(args.config, {"seed": args.seed})
    if args.output_dir:
        output = args.output_dir
    root = write_simulation(generate(sim_cfg), output)
    print(f"✅ 合成数据已写出: {root}")
    return 0


def cmd_stage(args) -> int:
    config = load_study_config(args.config, _overrides(args))
    QuasiCauseEngine(config).run_stage(args.name)
    print(f"✅ 阶段 {args.name} 完成, 结果目录 {config.output_dir}")
    return 0


def cmd_validate(args) -> int:
    config = load_study_config(args.config, _overrides(args))
    engine = QuasiCauseEngine(config)
    report = engine.validate()
    engine.writer.write_json("validation.json", report)
    print(json.dumps(report, sort_keys=True, indent=2, ensure_ascii=False))
    return 0


def parse_arguments(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """解析命令行参数"""
    parser = argparse.ArgumentParser(description='QuasiCause - 传感数据准实验因果推断')
    parser.add_argument('--verbose', action='store_true', help='输出 DEBUG 日志')
    parser.add_argument('--log-dir', default='logs', help='日志目录')
    sub = parser.add_subparsers(dest='command', required=True)

    def common(p, study: bool = True):
        p.add_argument('config', help='配置文件路径 (JSON)')
        p.add_argument('--seed', type=int, help='覆盖配置中的随机种子')
        p.add_argument('--output-dir', dest='output_dir', help='覆盖配置中的输出目录')
        if study:
            p.add_argument('--threads', type=int, help='并行线程数 (覆盖 QUASICAUSE_THREADS)')
            p.add_argument('--force', action='store_true', help='平衡性未通过时仍输出 ATE')

    run = sub.add_parser('run', help='执行完整流水线')
    common(run)
    run.set_defaults(func=cmd_run)

    simulate = sub.add_parser('simulate', help='生成合成数据')
    common(simulate, study=False)
    simulate.set_defaults(func=cmd_simulate)

    stage = sub.add_parser('stage', help='只执行单个阶段')
    stage.add_argument('name', choices=STAGES)
    common(stage)
    stage.set_defaults(func=cmd_stage)

    validate = sub.add_parser('validate', help='数据集覆盖情况')
    common(validate)
    validate.set_defaults(func=cmd_validate)

    return parser.parse_args(argv)


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = parse_arguments(argv)
    setup_logging(logging.DEBUG if args.verbose else logging.INFO, args.log_dir)
    try:
        return args.func(args)
    except QuasiCauseError as e:
        print(f"❌ [{e.stage}] {type(e).__name__}: {e}", file=sys.stderr)
        logger.error(f"[{e.stage}] {type(e).__name__}: {e}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
