// args: 5
int f(int n) {
    int s = 0;
    int i = 0;
top:
    if (i >= n) goto done;
    s = s + i * i;
    i++;
    goto top;
done:
    return s;
}
