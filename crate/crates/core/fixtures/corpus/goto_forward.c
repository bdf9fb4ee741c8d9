// args: -4
int f(int x) {
    if (x < 0) goto neg;
    x = x * 2;
    goto out;
neg:
    x = -x;
out:
    return x + 1;
}
