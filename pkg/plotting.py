"""
Latency CDF plots for bench reports.
"""

import numpy as np
import matplotlib
matplotlib.use('Agg')
from matplotlib import pyplot as plt


def plot_latency_cdf(reports, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for report in reports:
        latencies = np.sort(report.latencies_us)
        if latencies.size == 0:
            continue
        fraction = np.arange(1, latencies.size + 1) / latencies.size
        ax.step(latencies, fraction, where="post", label=report.runner)

    ax.set_xscale("log")
    ax.set_xlabel("latency (us)")
    ax.set_ylabel("fraction of queries")
    ax.set_title("{} latency CDF".format(reports[0].mode if reports else ""))
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
