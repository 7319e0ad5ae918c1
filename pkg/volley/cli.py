import json
import logging
import optparse
import os
import sys
import time

import numpy as np

from volley import config, consts, conv, linalg, misc, modelio, network
from volley import packing, quadgrad, simd, verify
from volley.errors import MissingFile, ShapeMismatch, UsageError, VolleyError
from volley.version import version

commands = ["matmul", "conv", "infer", "train", "verify", "pack", "report",
            "init-model"]

pack_procedures = {
    'column-shift': lambda pm, options: packing.incomplete_column_shift(pm),
    'row-shift': lambda pm, options: packing.row_shift(pm),
    'sum-row-vec': lambda pm, options: packing.sum_row_vec(pm),
    'sum-col-vec': lambda pm, options: packing.sum_col_vec(pm),
    'sum-for-conv': lambda pm, options: packing.sum_for_conv(
        pm, options.kh or consts.CONV_KERNEL_SIDE,
        options.kw or consts.CONV_KERNEL_SIDE),
}


class OptionParser(optparse.OptionParser):
    """Report bad usage as UsageError, so that it exits with code 1"""

    def error(self, msg):
        raise UsageError(msg)


class Args:

    def __init__(self):
        self.logger = logging.getLogger(__name__)
        self.cmd = None
        self.options = None

    def parse(self, argv):
        """Parse the command line arguments.

        Separates options and the command from the given argument list,
        checks their validity."""

        _usage = "\n".join(("%prog [OPTION]... COMMAND\n",
        "Commands:",
        "  matmul          multiply --a by --b with the packed algorithm",
        "  conv            convolve --images with the kernels of --kernels",
        "  infer           run the CNN of --model on IDX --images",
        "  train           train multiclass LR on the libsvm --data",
        "  verify          run the oracle suites (--suite)",
        "  pack            apply one packing --procedure to --input",
        "  report          print the cost model next to measured ledgers",
        "  init-model      write a seeded random (or --zero) model to --model",
        ))
        _version = "%prog " + version

        parser = OptionParser(usage=_usage, version=_version)

        group = optparse.OptionGroup(parser, "Run options")
        group.add_option("--slots", type=int, metavar="N",
                         help="slots per vector (power of two)")
        group.add_option("--seed", type=int, help="seed of every random draw")
        group.add_option("--tolerance", type=float,
                         help="largest error accepted by --verify")
        group.add_option("--workers", type=int,
                         help="threads used over kernel maps")
        group.add_option("--output", default="-", metavar="PATH",
                         help="write the JSON report to PATH instead of stdout")
        group.add_option("--config", metavar="PATH",
                         help="configuration file to read")
        group.add_option("--verify", action="store_true", default=False,
                         help="compare against the plaintext oracle")
        parser.add_option_group(group)

        group = optparse.OptionGroup(parser, "Data options")
        group.add_option("--a", metavar="CSV", help="left matrix")
        group.add_option("--b", metavar="CSV", help="right matrix")
        group.add_option("--input", metavar="CSV", help="matrix to pack")
        group.add_option("--procedure", choices=sorted(pack_procedures),
                         help="one of %s" % ", ".join(sorted(pack_procedures)))
        group.add_option("--result", metavar="PATH",
                         help="CSV written with the decoded result")
        group.add_option("--images", metavar="CSV|IDX")
        group.add_option("--labels", metavar="IDX")
        group.add_option("--kernels", metavar="DIR",
                         help="directory of conv_kN.csv kernels")
        group.add_option("--model", metavar="DIR")
        group.add_option("--data", metavar="LIBSVM")
        parser.add_option_group(group)

        group = optparse.OptionGroup(parser, "Shape options")
        for name in ("h", "w", "kh", "kw", "n", "f", "m"):
            group.add_option("--" + name, type=int)
        group.add_option("--batch", type=int)
        group.add_option("--count", type=int,
                         help="number of images to run through infer")
        group.add_option("--kernel-count", type=int,
                         default=consts.CONV_KERNELS)
        group.add_option("--hidden", type=int, default=consts.FC1_OUTPUTS)
        group.add_option("--classes", type=int)
        group.add_option("--zero", action="store_true", default=False,
                         help="init-model writes all-zero weights")
        group.add_option("--weights-plain", action="store_true", default=False,
                         help="dense weights as public constants")
        parser.add_option_group(group)

        group = optparse.OptionGroup(parser, "Training options")
        group.add_option("--optimizer", choices=sorted(quadgrad.OPTIMIZERS),
                         default="nag")
        group.add_option("--iters", type=int, default=50)
        group.add_option("--epsilon", type=float)
        group.add_option("--folds", type=int,
                         help="also report stratified K-fold accuracy")
        group.add_option("--suite", choices=sorted(verify.suite_map) + ["all"],
                         default="all")
        group.add_option("--inject-fault", action="store_true", default=False,
                         help="corrupt one verify case (harness self-test)")
        parser.add_option_group(group)

        parser.add_option("-v", "--verbose", dest="log_level",
                          action="append_const", const=-10,
                          help="Increase log verbosity")
        parser.add_option("-q", "--quiet", dest="log_level",
                          action="append_const", const=10,
                          help="Decrease log verbosity")
        parser.set_defaults(log_level=[logging.root.level])

        options, cmds = parser.parse_args(argv[1:])

        # Update default log level
        logging.root.setLevel(sum(options.log_level))

        if len(cmds) != 1:
            parser.error("exactly one command expected, got %d" % len(cmds))
        if cmds[0] not in commands:
            parser.error("unknown command %s" % cmds[0])
        self.cmd = cmds[0]
        self.options = options


def _ledger(ledger):
    return ledger.snapshot().as_dict()


def _require(options, *names):
    missing = [name for name in names if getattr(options, name) is None]
    if missing:
        raise UsageError("missing option(s): %s" %
                         ", ".join("--" + n.replace('_', '-') for n in missing))


class CliMain:

    def __init__(self, args):
        self.logger = logging.getLogger(__name__)
        self.options = args.options
        self.cmd = args.cmd
        self.config = config.Config(self.options.config)
        self.config.settings_load_real()
        self.run = self.config.run_config(
            slots=self.options.slots, seed=self.options.seed,
            tolerance=self.options.tolerance, output=self.options.output,
            workers=self.options.workers)
        self.logger.debug("Running %s with %r", self.cmd, self.run)

    def execute_cmd(self):
        """Run the command, write its report, return the exit code"""
        report, passed = getattr(self, "_execute_%s" % self.cmd.replace('-', '_'))()
        self._emit(report)
        return consts.EXIT_OK if passed else consts.EXIT_VERIFY_FAILED

    def _emit(self, report):
        text = json.dumps(report, indent=2, sort_keys=True)
        if self.run.output == "-":
            sys.stdout.write(text + "\n")
        else:
            with open(self.run.output, 'w', encoding="utf-8") as f:
                f.write(text + "\n")

    def _check(self, report, err):
        report['max_abs_err'] = err
        return err <= self.run.tolerance

    def _execute_matmul(self):
        _require(self.options, 'a', 'b')
        A = misc.read_matrix_csv(self.options.a)
        B = misc.read_matrix_csv(self.options.b)
        if A.shape[1] != B.shape[0]:
            raise ShapeMismatch("cannot multiply %dx%d by %dx%d" % (A.shape + B.shape))
        ledger = simd.OpLedger()
        pa = packing.pack_matrix(A, self.run.slots, ledger)
        blocks = linalg.he_matmul_blocks(pa, B, self.options.weights_plain)
        C = np.hstack([product.decode() for _, product in blocks])

        result_path = self.options.result or (
            os.path.splitext(self.options.a)[0] + "_product.csv")
        misc.write_matrix_csv(result_path, C)
        report = {'result_path': result_path, 'ledger': _ledger(ledger)}
        passed = True
        if self.options.verify:
            err = float(np.max(np.abs(C - linalg.plain_matmul(A, B))))
            passed = self._check(report, err)
        return report, passed

    def _read_images(self):
        _require(self.options, 'images')
        path = self.options.images
        if path.endswith(".csv"):
            matrix = misc.read_matrix_csv(path)
            h = self.options.h or matrix.shape[0]
            if matrix.shape[0] % h:
                raise ShapeMismatch("%d rows do not split into images of %d rows"
                                    % (matrix.shape[0], h))
            images = matrix.reshape(-1, h, matrix.shape[1])
        else:
            images = modelio.load_idx_images(path)
        if self.options.w and images.shape[2] != self.options.w:
            raise ShapeMismatch("images are %d pixels wide, not %d" %
                                (images.shape[2], self.options.w))
        return images

    def _read_kernels(self):
        _require(self.options, 'kernels')
        kernels = []
        while True:
            path = os.path.join(self.options.kernels,
                                consts.MODEL_KERNEL % len(kernels))
            if not os.path.exists(path):
                break
            kernels.append(misc.read_matrix_csv(path))
        if not kernels:
            raise MissingFile("No %s in %s" % (consts.MODEL_KERNEL % 0,
                                               self.options.kernels))
        kh, kw = kernels[0].shape
        if (self.options.kh or kh, self.options.kw or kw) != (kh, kw):
            raise ShapeMismatch("kernels are %dx%d, not %dx%d" %
                                (kh, kw, self.options.kh or kh,
                                 self.options.kw or kw))
        return kernels

    def _execute_conv(self):
        images = self._read_images()
        if self.options.batch:
            images = images[:self.options.batch]
        elif not self.options.images.endswith(".csv"):
            images = images[:consts.MNIST_BATCH]
        batch, h, w = images.shape
        spec = conv.ConvSpec(h, w, self._read_kernels(), batch=batch)

        ledger = simd.OpLedger()
        ct = packing.pack_matrix(images.reshape(batch * h, w), self.run.slots, ledger)
        maps = conv.he_conv2d(ct, spec, self.run.workers)
        after_conv = ledger.snapshot()

        map_size = spec.out_h * spec.out_w
        if batch * spec.kernel_count * map_size <= self.run.slots:
            dense = conv.reconstruct_representation(maps, spec).decode()
        else:
            dense = np.hstack([conv.reconstruct_representation([pm], spec).decode()
                               for pm in maps])
        rotations = (ledger.snapshot() - after_conv).rotations
        per_map = rotations / float(batch * spec.kernel_count)

        report = {
            'out_shape': [batch, spec.kernel_count, spec.out_h, spec.out_w],
            'flattened_width': spec.kernel_count * map_size,
            'ledger': _ledger(ledger),
            'reconstruction': {'rotations': rotations,
                               'rotations_per_map': per_map,
                               'budget_per_map': spec.out_h + 1,
                               'within_budget': per_map <= spec.out_h + 1},
        }
        if self.options.result:
            misc.write_matrix_csv(self.options.result, dense)
            report['result_path'] = self.options.result
        passed = True
        if self.options.verify:
            expected = conv.plain_conv2d(images, spec).reshape(batch, -1)
            passed = self._check(report, float(np.max(np.abs(dense - expected))))
        return report, passed

    def _execute_infer(self):
        _require(self.options, 'model', 'images')
        model = modelio.load_model(self.options.model)
        images = modelio.load_idx_images(self.options.images)
        batch_size = self.options.batch or consts.MNIST_BATCH
        count = min(self.options.count or batch_size, images.shape[0])
        labels = None
        if self.options.labels:
            labels = modelio.load_idx_labels(self.options.labels)[:count]
        data = network.Batch(images[:count], labels)

        ledger = simd.OpLedger()
        started = time.monotonic()
        logits = []
        for chunk in data.chunks(batch_size):
            logits.append(network.he_forward(
                chunk, model, self.options.weights_plain, self.run.slots,
                ledger, self.run.workers))
        logits = np.vstack(logits)
        wall_time_ms = (time.monotonic() - started) * 1000.0

        plain = network.plaintext_forward(data, model)
        predicted = misc.argmax_rows(logits)
        report = {
            'logits': logits.tolist(),
            'per_image_argmax': predicted,
            'max_err_vs_plain': float(np.max(np.abs(logits - plain))),
            'ledger': _ledger(ledger),
            'wall_time_ms': wall_time_ms,
        }
        if labels is not None:
            report['accuracy'] = float(np.mean(np.array(predicted) == labels))
        return report, report['max_err_vs_plain'] <= consts.FORWARD_TOLERANCE

    def _execute_train(self):
        _require(self.options, 'data')
        if self.options.iters < 1:
            raise UsageError("--iters must be at least 1")
        ds = quadgrad.load_libsvm(self.options.data, self.options.classes)
        epsilon = self.config.epsilon if self.options.epsilon is None \
            else self.options.epsilon
        trainer = quadgrad.OPTIMIZERS[self.options.optimizer]
        if self.options.optimizer == 'adagrad':
            W, trace = trainer(ds, self.options.iters, epsilon,
                               self.config.adagrad_epsilon)
        else:
            W, trace = trainer(ds, self.options.iters, epsilon)

        weights_path = self.options.result or (
            os.path.splitext(self.options.data)[0] + "_weights.csv")
        misc.write_matrix_csv(weights_path, W)
        report = {'optimizer': self.options.optimizer,
                  'iterations': self.options.iters,
                  'trace': trace,
                  'accuracy': quadgrad.accuracy(ds, W),
                  'weights_path': weights_path}
        if self.options.folds:
            report['cv_accuracy'] = quadgrad.cross_validate(
                ds, self.options.optimizer, self.options.iters,
                self.options.folds, self.run.seed, epsilon)
        return report, True

    def _execute_verify(self):
        report = verify.run_suite(self.options.suite, self.run,
                                  self.options.inject_fault)
        return report, report['failures'] == 0

    def _execute_pack(self):
        _require(self.options, 'input', 'procedure')
        Z = misc.read_matrix_csv(self.options.input)
        ledger = simd.OpLedger()
        pm = packing.pack_matrix(Z, self.run.slots, ledger)
        out = pack_procedures[self.options.procedure](pm, self.options)
        result_path = self.options.result or (
            os.path.splitext(self.options.input)[0] + "_packed.csv")
        misc.write_matrix_csv(result_path, out.decode())
        return {'result_path': result_path, 'rows': out.rows, 'cols': out.cols,
                'ledger': _ledger(ledger)}, True

    def _execute_report(self):
        rng = np.random.default_rng(self.run.seed)
        report = {}
        if self.options.n and self.options.f and self.options.m:
            n, f, m = self.options.n, self.options.f, self.options.m
            ledger = simd.OpLedger()
            pa = packing.pack_matrix(rng.uniform(-1, 1, size=(n, f)),
                                     self.run.slots, ledger)
            B = rng.uniform(-1, 1, size=(f, m))
            linalg.he_matmul_blocks(pa, B)
            report['matmul'] = {
                'shape': [n, f, m],
                'column_blocks': len(linalg.column_blocks(n, m)),
                'rotations': linalg.he_matmul_rotations(n, f, m),
                'cipher_mults': linalg.he_matmul_cipher_mults(n, m),
                'sum_col_vec_rotations': packing.sum_col_vec_rotations(f),
                'measured': _ledger(ledger)}
        if self.options.h and self.options.w:
            side = self.options.kh or consts.CONV_KERNEL_SIDE
            batch = self.options.batch or 1
            spec = conv.ConvSpec(
                self.options.h, self.options.w,
                rng.uniform(-1, 1, size=(self.options.kernel_count, side,
                                         self.options.kw or side)),
                batch=batch)
            ledger = simd.OpLedger()
            ct = packing.pack_matrix(
                rng.uniform(0, 1, size=(batch * spec.h, spec.w)),
                self.run.slots, ledger)
            maps = conv.he_conv2d(ct, spec)
            after_conv = ledger.snapshot()
            for pm in maps:
                conv.reconstruct_representation([pm], spec)
            report['conv'] = {
                'shape': [batch, spec.h, spec.w, spec.kh, spec.kw],
                'kernels': spec.kernel_count,
                'conv_rotations': conv.conv_rotations(spec),
                'conv_const_mults': conv.conv_const_mults(spec),
                'reconstruct_rotations': (spec.kernel_count
                                          * conv.reconstruct_rotations(spec, 1)),
                'measured_conv': after_conv.as_dict(),
                'measured_reconstruct': (ledger.snapshot() - after_conv).as_dict()}
        if not report:
            raise UsageError("report needs --n --f --m and/or --h --w")
        return report, True

    def _execute_init_model(self):
        _require(self.options, 'model')
        side = self.options.kh or consts.CONV_KERNEL_SIDE
        shape = dict(h=self.options.h or consts.MNIST_SIDE,
                     w=self.options.w or consts.MNIST_SIDE,
                     kernel_count=self.options.kernel_count,
                     kernel_side=side, hidden=self.options.hidden,
                     classes=self.options.classes or consts.FC2_OUTPUTS)
        if self.options.zero:
            model = network.CnnModel.zeros(**shape)
        else:
            model = network.CnnModel.random(self.run.seed, **shape)
        modelio.save_model(self.options.model, model)
        return {'model': self.options.model, 'kernels': model.kernel_count,
                'features': model.features, 'hidden': model.hidden,
                'classes': model.classes}, True


def main(argv):
    """Run the command line `argv` and return the exit code"""
    logger = logging.getLogger(__name__)
    try:
        args = Args()
        args.parse(argv)
        return CliMain(args).execute_cmd()
    except (VolleyError, OSError) as e:
        logger.critical("%s: %s", type(e).__name__, e)
        return consts.EXIT_USAGE
