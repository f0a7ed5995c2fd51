/**
 * Thin wrapper around the `flowbench` executable. All engine work (split
 * materialization, scaler fitting, exports) happens in the engine process;
 * failures surface the engine's single-line error verbatim.
 */

import { execFileSync } from 'node:child_process';

export class FlowbenchCliError extends Error {
  constructor(
    public readonly args: string[],
    public readonly exitCode: number | null,
    public readonly stderr: string,
  ) {
    super(stderr.trim() || `flowbench ${args.join(' ')} failed with exit code ${exitCode}`);
    this.name = 'FlowbenchCliError';
  }
}

export function runFlowbench(args: string[], binary = 'flowbench'): string {
  try {
    return execFileSync(binary, args, { encoding: 'utf-8', stdio: ['ignore', 'pipe', 'pipe'] });
  } catch (err) {
    const e = err as { status?: number | null; stderr?: string | Buffer; message?: string };
    const stderr =
      typeof e.stderr === 'string' ? e.stderr : e.stderr?.toString('utf-8') ?? e.message ?? '';
    throw new FlowbenchCliError(args, e.status ?? null, stderr);
  }
}
