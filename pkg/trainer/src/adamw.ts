/** AdamW with decoupled weight decay and per-group learning rates.
 *
 * tf.train only ships coupled-L2 Adam, so the update is applied by hand:
 * moment estimates drive the adaptive step, and the decay term is
 * subtracted from the weights directly (it never enters the moments).
 */

import * as tf from "@tensorflow/tfjs";

export interface ParamGroup {
  names: string[];
  lr: number;
}

export class AdamW {
  private m = new Map<string, tf.Variable>();
  private v = new Map<string, tf.Variable>();
  private step = 0;

  constructor(
    private readonly variables: Map<string, tf.Variable>,
    public groups: ParamGroup[],
    private readonly weightDecay: number,
    private readonly beta1 = 0.9,
    private readonly beta2 = 0.999,
    private readonly epsilon = 1e-8,
  ) {
    const grouped = new Set(groups.flatMap((g) => g.names));
    for (const name of variables.keys()) {
      if (!grouped.has(name)) throw new Error(`variable ${name} is in no param group`);
      this.m.set(name, tf.variable(tf.zerosLike(variables.get(name)!), false));
      this.v.set(name, tf.variable(tf.zerosLike(variables.get(name)!), false));
    }
  }

  lrOf(name: string): number {
    for (const g of this.groups) if (g.names.includes(name)) return g.lr;
    throw new Error(`variable ${name} is in no param group`);
  }

  /** Multiply every group's learning rate (plateau schedule hook). */
  scaleLr(factor: number): void {
    for (const g of this.groups) g.lr *= factor;
  }

  applyGradients(grads: { [name: string]: tf.Tensor }): void {
    this.step += 1;
    const t = this.step;
    for (const [name, variable] of this.variables) {
      const grad = grads[name];
      if (!grad) continue;
      const lr = this.lrOf(name);
      tf.tidy(() => {
        const m = this.m.get(name)!;
        const v = this.v.get(name)!;
        m.assign(m.mul(this.beta1).add(grad.mul(1 - this.beta1)));
        v.assign(v.mul(this.beta2).add(grad.square().mul(1 - this.beta2)));
        const mHat = m.div(1 - Math.pow(this.beta1, t));
        const vHat = v.div(1 - Math.pow(this.beta2, t));
        const adaptive = mHat.div(vHat.sqrt().add(this.epsilon));
        const decayed = variable.mul(this.weightDecay);
        variable.assign(variable.sub(adaptive.add(decayed).mul(lr)));
      });
    }
  }

  dispose(): void {
    for (const v of this.m.values()) v.dispose();
    for (const v of this.v.values()) v.dispose();
  }
}
