"""
avband 命令行主程序

子命令: probe / estimate / ingest / simulate / fit / responder
退出码: 0 成功, 1 运行或 IO 错误, 2 输入非法或数据不足
"""

import argparse
import logging
import os
import sys
from datetime import datetime
from typing import List, Optional, Tuple

import numpy as np
import requests
from pydantic import ValidationError

from avband import __version__
from avband.core.config import config
from avband.core.envelope import (
    Comparison,
    EstimateBlock,
    FitBlock,
    OutputEnvelope,
    TruthBlock,
)
from avband.core.estimators import (
    DegenerateInput,
    InsufficientData,
    PathEstimate,
    affine_fit,
    direction_label,
    estimate_from_differences,
    estimate_path,
)
from avband.core.pathsim import load_path_spec, run_experiment
from avband.core.probe import EchoResponder, ProbeConfig, ProbeMode, probe_and_estimate
from avband.core.ripe_ingest import (
    match_pairs,
    pairs_to_samples,
    read_rcdp_file,
    read_sndp_file,
)
from avband.core.samples import (
    AvbandError,
    Direction,
    SampleSet,
    SizeDelayStats,
    adjacent_differences,
    aggregate,
    filter_outliers,
    read_samples_csv,
    write_samples_csv,
)
from avband.utils import ensure_directory, parse_duration

logger = logging.getLogger(__name__)

# setup_logging 安装的处理器，重复调用时替换
_installed_handlers: List[logging.Handler] = []


def setup_logging(command: str = "main") -> logging.Logger:
    """配置日志"""
    # 创建logs目录（如果不存在）
    log_dir = config.output.log_dir
    ensure_directory(log_dir)

    # 生成日志文件路径
    log_file = os.path.join(
        log_dir, f'avband_{command}_{datetime.now().strftime("%Y%m%d_%H%M%S")}.log'
    )

    # 配置根日志记录器
    root_logger = logging.getLogger()
    root_logger.setLevel(logging.DEBUG)  # 设置为DEBUG以捕获所有级别的日志
    for handler in _installed_handlers:
        root_logger.removeHandler(handler)
        handler.close()
    _installed_handlers.clear()

    # 创建并配置文件处理器
    file_handler = logging.FileHandler(log_file, encoding="utf-8")
    file_handler.setLevel(logging.DEBUG)
    file_format = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s", datefmt="%Y-%m-%d %H:%M:%S"
    )
    file_handler.setFormatter(file_format)
    root_logger.addHandler(file_handler)

    # 控制台处理器写 stderr，stdout 只输出结果
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(logging.INFO)  # 控制台只显示INFO及以上级别
    console_format = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s", datefmt="%H:%M:%S"
    )
    console_handler.setFormatter(console_format)
    root_logger.addHandler(console_handler)

    _installed_handlers.extend([file_handler, console_handler])
    return logging.getLogger(__name__)


def _sizes(text: str) -> List[int]:
    """解析 --sizes 64,1064"""
    try:
        sizes = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"尺寸必须为逗号分隔的整数: {text}")
    if len(sizes) < 2:
        raise argparse.ArgumentTypeError(f"至少需要两种尺寸: {text}")
    if any(size < 1 for size in sizes):
        raise argparse.ArgumentTypeError(f"尺寸必须 >= 1: {text}")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise argparse.ArgumentTypeError(f"尺寸必须严格递增: {text}")
    return sizes


def _delay_item(text: str) -> Tuple[int, float]:
    """解析 --delay 32=18ms"""
    size, sep, delay = text.partition("=")
    try:
        if not sep:
            raise ValueError(text)
        return int(size), parse_duration(delay)
    except ValueError:
        raise argparse.ArgumentTypeError(f"格式应为 尺寸=时延，例如 32=18ms: {text}")


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"必须为正数: {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    """构建命令行解析器"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--format",
        choices=["human", "json"],
        default=config.output.format,
        help="输出格式 (环境变量 AVBAND_OUTPUT_FORMAT)",
    )
    common.add_argument(
        "--callback-url", default=config.output.callback_url, help="成功后 POST 结果的回调URL"
    )

    parser = argparse.ArgumentParser(prog="avband", description="端到端可用带宽 / 容量估计工具")
    parser.add_argument("--version", action="version", version=f"avband {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    # probe
    probe = subparsers.add_parser("probe", parents=[common], help="主动探测并估计")
    probe.add_argument("target", help="目标主机名或地址")
    probe.add_argument("--sizes", type=_sizes, default=config.probe.sizes, help="负载大小，如 64,1064")
    probe.add_argument("--retries", type=int, default=config.probe.retries, help="每种尺寸的探测次数")
    probe.add_argument("--pacing", type=float, default=config.probe.pacing, help="探测间隔(秒)")
    probe.add_argument("--timeout", type=float, default=config.probe.timeout, help="单次超时(秒)")
    probe.add_argument(
        "--mode", choices=[m.value for m in ProbeMode], default=config.probe.mode, help="探测方式"
    )
    probe.add_argument("--port", type=int, default=config.probe.udp_port, help="UDP echo 端口")
    probe.add_argument("--dont-fragment", action="store_true", help="设置 DF 位")
    probe.add_argument("--out", help="样本 CSV 输出文件")
    probe.set_defaults(handler=cmd_probe)

    # estimate
    estimate = subparsers.add_parser("estimate", parents=[common], help="由样本 CSV 估计")
    estimate.add_argument("samples_file", help="样本 CSV 文件")
    estimate.add_argument("--method", choices=["auto", "two_point", "fit"], default="auto")
    estimate.add_argument(
        "--stat", choices=["both", "mean", "min"], default="both", help="输出平均/最小时延结果"
    )
    estimate.add_argument("--direction", choices=[d.value for d in Direction], help="只使用该方向")
    estimate.add_argument(
        "--filter-k",
        type=_positive_float,
        default=config.estimator.outlier_k,
        help="离群过滤系数 k",
    )
    estimate.set_defaults(handler=cmd_estimate)

    # ingest
    ingest = subparsers.add_parser("ingest", parents=[common], help="解析 RIPE Test Box 日志")
    ingest.add_argument("send_file", help="发送端 SNDP 日志")
    ingest.add_argument("recv_file", help="接收端 RCDP 日志")
    ingest.add_argument("--direction", choices=["forward", "reverse"], default="forward")
    ingest.add_argument("--pairing", choices=["aggregate", "adjacent"], default="aggregate")
    ingest.add_argument("--target-host", help="只保留 -h 为该值的发送记录")
    ingest.add_argument("--method", choices=["auto", "two_point", "fit"], default="auto")
    ingest.add_argument("--lenient", action="store_true", help="跳过格式错误的行")
    ingest.add_argument("--out", help="样本 CSV 输出文件")
    ingest.set_defaults(handler=cmd_ingest)

    # simulate
    simulate = subparsers.add_parser("simulate", parents=[common], help="路径仿真与真值对照")
    simulate.add_argument("path_config", help="路径描述文件 (YAML/JSON)")
    simulate.add_argument("--sizes", type=_sizes, default=[100, 1024], help="探测尺寸")
    simulate.add_argument(
        "--probes", type=int, default=config.simulator.probes_per_size, help="每种尺寸的探测数"
    )
    simulate.add_argument("--pacing", type=float, default=config.simulator.pacing, help="探测间隔(秒)")
    simulate.add_argument("--seed", type=int, default=config.simulator.seed, help="随机种子")
    simulate.add_argument("--method", choices=["auto", "two_point", "fit"], default="auto")
    simulate.add_argument("--out", help="样本 CSV 输出文件")
    simulate.set_defaults(handler=cmd_simulate)

    # fit
    fit = subparsers.add_parser("fit", parents=[common], help="时延-尺寸线性拟合")
    fit.add_argument("samples_file", help="样本 CSV 文件")
    fit.add_argument("--stat", choices=["mean", "min"], default="mean", help="拟合模式")
    fit.add_argument("--direction", choices=[d.value for d in Direction], help="只使用该方向")
    fit.add_argument("--dump-points", action="store_true", help="输出 (尺寸, 时延) 点")
    fit.add_argument("--plot", help="输出 Packet Size vs Delay 图片")
    fit.set_defaults(handler=cmd_fit)

    # responder
    responder = subparsers.add_parser("responder", help="UDP echo 应答器")
    responder.add_argument("--host", default="0.0.0.0", help="监听地址")
    responder.add_argument("--port", type=int, default=7007, help="监听端口")
    responder.add_argument(
        "--delay", type=_delay_item, action="append", default=[], help="按尺寸注入时延，如 32=18ms"
    )
    responder.add_argument("--default-delay", type=parse_duration, default=0.0, help="默认时延")
    responder.set_defaults(handler=cmd_responder)

    return parser


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """解析命令行参数"""
    return build_parser().parse_args(argv)


def _select_direction(
    sample_set: SampleSet, direction: Optional[str]
) -> Tuple[SampleSet, Direction]:
    if direction is not None:
        chosen = Direction(direction)
        empty = SampleSet(meta=dict(sample_set.meta))
        return sample_set.by_direction().get(chosen, empty), chosen
    directions = sample_set.directions
    if len(directions) > 1:
        names = ", ".join(d.value for d in directions)
        raise DegenerateInput(f"样本包含多个方向({names})，请用 --direction 指定")
    return sample_set, directions[0] if directions else Direction.ROUND_TRIP


def _estimate_or_warn(
    stats: List[SizeDelayStats], method: str, label: str, warnings: List[str]
) -> Optional[PathEstimate]:
    try:
        estimate = estimate_path(stats, method=method, label=label)
    except InsufficientData as e:
        logger.warning(str(e))
        warnings.append(str(e))
        return None
    warnings.extend(estimate.warnings)
    return estimate


def _exit_code(estimate: Optional[PathEstimate]) -> int:
    return 0 if estimate is not None and estimate.produced else 2


def cmd_probe(args: argparse.Namespace) -> Tuple[int, OutputEnvelope]:
    """主动探测"""
    probe_config = ProbeConfig(
        target=args.target,
        sizes=args.sizes,
        retries=args.retries,
        pacing=args.pacing,
        timeout=args.timeout,
        mode=args.mode,
        port=args.port,
        dont_fragment=args.dont_fragment,
    )
    report, estimate = probe_and_estimate(probe_config)
    if args.out:
        write_samples_csv(report.samples, args.out)
        logger.info(f"样本已写入: {args.out}")

    envelope = OutputEnvelope(
        command="probe",
        inputs={
            "target": probe_config.target,
            "address": report.address,
            "mode": probe_config.mode.value,
            "sizes_bytes": probe_config.sizes,
            "retries": probe_config.retries,
            "pacing_s": probe_config.pacing,
            "timeout_s": probe_config.timeout,
        },
        counts={
            "per_size": [c.model_dump() for c in report.counts],
            "stray": report.stray,
            "duration_s": report.duration,
        },
        estimate=EstimateBlock.from_estimate(estimate),
        warnings=estimate.warnings,
    ).with_stats(aggregate(report.samples, direction=Direction.ROUND_TRIP))
    return _exit_code(estimate), envelope


def cmd_estimate(args: argparse.Namespace) -> Tuple[int, OutputEnvelope]:
    """由样本文件估计"""
    sample_set = read_samples_csv(args.samples_file)
    warnings: List[str] = []
    if args.filter_k is not None:
        sample_set = filter_outliers(sample_set, args.filter_k)
    sample_set, direction = _select_direction(sample_set, args.direction)
    stats = aggregate(sample_set, direction=direction, warnings=warnings)
    estimate = _estimate_or_warn(stats, args.method, direction_label(direction), warnings)

    envelope = OutputEnvelope(
        command="estimate",
        inputs={
            "samples_file": args.samples_file,
            "samples": len(sample_set),
            "method": args.method,
            "stat": args.stat,
            "filter_k": args.filter_k,
        },
        estimate=EstimateBlock.from_estimate(estimate, args.stat) if estimate else None,
        warnings=warnings,
    ).with_stats(stats)
    return _exit_code(estimate), envelope


def cmd_ingest(args: argparse.Namespace) -> Tuple[int, OutputEnvelope]:
    """解析 RIPE 日志、配对并估计"""
    warnings: List[str] = []
    direction = (
        Direction.ONE_WAY_FORWARD if args.direction == "forward" else Direction.ONE_WAY_REVERSE
    )
    send = read_sndp_file(args.send_file, lenient=args.lenient, warnings=warnings)
    recv = read_rcdp_file(args.recv_file, lenient=args.lenient, warnings=warnings)
    report = match_pairs(send, recv, direction=direction, target_host=args.target_host)
    warnings.extend(report.warnings)

    meta = {"source": "ripe", "send_file": args.send_file, "recv_file": args.recv_file}
    sample_set = pairs_to_samples(report.pairs, meta=meta)
    if args.out and report.pairs:
        write_samples_csv(sample_set, args.out)
        logger.info(f"样本已写入: {args.out}")

    envelope = OutputEnvelope(
        command="ingest",
        inputs={
            "send_file": args.send_file,
            "recv_file": args.recv_file,
            "direction": direction.value,
            "pairing": args.pairing,
            "target_host": args.target_host,
        },
        counts={
            "send_records": len(send),
            "recv_records": len(recv),
            "pairs": len(report.pairs),
            "unmatched_send": report.unmatched_send,
            "unmatched_recv": report.unmatched_recv,
            "duplicates": report.duplicates,
        },
        warnings=warnings,
    )
    if not report.pairs:
        return 2, envelope

    stats = aggregate(sample_set, direction=direction, warnings=warnings)
    envelope.with_stats(stats)
    if len(stats) >= 2:
        envelope.counts["mean_delay_difference_s"] = stats[-1].d_mean - stats[0].d_mean

    label = direction_label(direction)
    if args.pairing == "adjacent" and len(stats) >= 2:
        small, large = stats[0].size, stats[-1].size
        differences = adjacent_differences(sample_set, small, large)
        envelope.counts["adjacent_pairs"] = len(differences)
        estimate = estimate_from_differences(
            large - small, float(np.mean(differences)), float(np.min(differences)), label=label
        )
        warnings.extend(estimate.warnings)
    else:
        estimate = _estimate_or_warn(stats, args.method, label, warnings)

    if estimate is not None:
        envelope.estimate = EstimateBlock.from_estimate(estimate)
    return _exit_code(estimate), envelope


def cmd_simulate(args: argparse.Namespace) -> Tuple[int, OutputEnvelope]:
    """路径仿真，估计值与真值对照"""
    path = load_path_spec(args.path_config)
    sample_set, truth = run_experiment(
        path, args.sizes, args.probes, args.pacing, seed=args.seed
    )
    if args.out:
        write_samples_csv(sample_set, args.out)
        logger.info(f"样本已写入: {args.out}")

    warnings: List[str] = []
    stats = aggregate(sample_set, direction=Direction.ONE_WAY_FORWARD, warnings=warnings)
    estimate = _estimate_or_warn(
        stats, args.method, direction_label(Direction.ONE_WAY_FORWARD), warnings
    )

    envelope = OutputEnvelope(
        command="simulate",
        inputs={
            "path_config": args.path_config,
            "hops": path.hop_count,
            "sizes_bytes": args.sizes,
            "probes_per_size": args.probes,
            "pacing_s": args.pacing,
            "seed": args.seed,
        },
        ground_truth=TruthBlock.from_truth(truth),
        warnings=warnings,
    ).with_stats(stats)
    if estimate is not None:
        envelope.estimate = EstimateBlock.from_estimate(estimate)
        envelope.comparison = [
            Comparison.build(
                "capacity (composite)", "bps", estimate.capacity, truth.composite_rate
            ),
            Comparison.build(
                "available bandwidth", "bps", estimate.b_av, truth.available_bandwidth
            ),
            Comparison.build("D_min", "s", estimate.d_min, truth.d_min_zero_size),
        ]
    return _exit_code(estimate), envelope


def cmd_fit(args: argparse.Namespace) -> Tuple[int, OutputEnvelope]:
    """时延对尺寸的线性拟合"""
    sample_set = read_samples_csv(args.samples_file)
    sample_set, direction = _select_direction(sample_set, args.direction)
    warnings: List[str] = []
    stats = aggregate(sample_set, direction=direction, warnings=warnings)
    points = [(s.size, s.delay) for s in sample_set.samples]
    fit = affine_fit(points, use_min=args.stat == "min")
    if fit.capacity is None:
        message = f"拟合斜率非正({fit.slope})，无法得到容量"
        logger.warning(message)
        warnings.append(message)

    if args.plot:
        from avband.core.plotting import plot_size_delay

        plot_size_delay(sample_set, args.plot)

    envelope = OutputEnvelope(
        command="fit",
        inputs={"samples_file": args.samples_file, "stat": args.stat, "plot": args.plot},
        fit=FitBlock.from_fit(fit),
        points=sorted(points) if args.dump_points else None,
        warnings=warnings,
    ).with_stats(stats)
    return 0, envelope


def cmd_responder(args: argparse.Namespace) -> Tuple[int, Optional[OutputEnvelope]]:
    """前台运行 UDP echo 应答器"""
    responder = EchoResponder(
        host=args.host,
        port=args.port,
        delays=dict(args.delay),
        default_delay=args.default_delay,
    )
    try:
        responder.serve_forever()
    except KeyboardInterrupt:
        logger.info("应答器已停止")
    return 0, None


def send_callback(url: str, envelope: OutputEnvelope) -> None:
    """执行成功回调，失败只记录日志"""
    logger.info("执行成功回调...")
    try:
        response = requests.post(url, json=envelope.model_dump(mode="json"), timeout=10)
        logger.info(f"回调响应: {response.status_code} {response.text}")
    except requests.RequestException as e:
        logger.error(f"回调失败: {str(e)}")


def main(argv: Optional[List[str]] = None) -> int:
    """主函数"""
    args = parse_args(argv)
    try:
        setup_logging(args.command)
        if config.errors:
            for error in config.errors:
                logger.error(f"环境变量配置非法: {error}")
            return 2
        logger.info(f"开始运行 avband {args.command}...")
        start_time = datetime.now()

        code, envelope = args.handler(args)

        if envelope is not None:
            output = envelope.to_json() if args.format == "json" else envelope.to_human()
            sys.stdout.write(output if output.endswith("\n") else output + "\n")
            sys.stdout.flush()

        logger.info("-" * 50)
        logger.info(f"avband {args.command} 执行完成! 退出码 {code}")
        logger.info(f"执行时间: {datetime.now() - start_time}")
        logger.info("-" * 50)

        callback_url = getattr(args, "callback_url", None)
        if envelope is not None and code == 0 and callback_url:
            send_callback(callback_url, envelope)
        return code

    except AvbandError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except ValidationError as e:
        logger.error(f"参数校验失败: {e}")
        return 2
    except OSError as e:
        logger.error(f"IO 错误: {e}")
        return 1
    except KeyboardInterrupt:
        logger.info("\n用户中断执行")
        return 1
    except Exception as e:
        logger.error(f"程序执行失败: {str(e)}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
